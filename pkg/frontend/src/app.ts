/**
 * DOM wiring for the single-page companion. All state lives in the wizard,
 * calibration and trend modules; this file only moves values between them
 * and the document.
 */

import { ApiClient, REGIONS, Region, ThresholdRow } from "./api.js";
import { submitReportPhoto, submitTypedHb } from "./calibration.js";
import { buildTrend, renderTrendSvg } from "./trend.js";
import { CAPTURE_GUIDANCE, CaptureWizard, WizardGatingError } from "./wizard.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(message: string): void {
  el<HTMLElement>("status").textContent = message;
}

// threshold bands for the trend chart; kept in the page config so the row
// always matches what the service's bundle is using for this patient
declare global {
  interface Window {
    HEMASCREEN_BASE_URL?: string;
    HEMASCREEN_THRESHOLD_ROW?: ThresholdRow;
  }
}

export function boot(): void {
  const api = new ApiClient({
    baseUrl: window.HEMASCREEN_BASE_URL ?? "http://127.0.0.1:8000",
  });
  let wizard: CaptureWizard | null = null;

  el<HTMLButtonElement>("connect").addEventListener("click", async () => {
    const patientId = el<HTMLInputElement>("patient-id").value.trim();
    try {
      const record = await api.getPatient(patientId);
      wizard = new CaptureWizard(api, patientId);
      setStatus(`connected to ${record.id} (calibration n=${record.calibration.n_points})`);
      renderWizard();
      await refreshTrend();
    } catch (error) {
      setStatus(error instanceof Error ? error.message : String(error));
    }
  });

  function renderWizard(): void {
    if (!wizard) return;
    for (const region of REGIONS) {
      const slot = wizard.slots[region];
      el<HTMLElement>(`slot-${region}`).textContent =
        slot.status === "empty" ? "no image" :
        slot.status === "staged" ? `staged: ${slot.fileName}` +
          ("lastError" in slot && slot.lastError ? ` (retry: ${slot.lastError})` : "") :
        `uploaded (${slot.captureId})`;
      el<HTMLElement>(`guide-${region}`).textContent = CAPTURE_GUIDANCE[region];
    }
    el<HTMLButtonElement>("screen").disabled = !wizard.canScreen();
  }

  for (const region of REGIONS) {
    el<HTMLInputElement>(`file-${region}`).addEventListener("change", (event) => {
      const input = event.target as HTMLInputElement;
      const file = input.files?.[0];
      if (wizard && file) {
        wizard.stage(region as Region, file, file.name);
        renderWizard();
      }
    });
    el<HTMLButtonElement>(`upload-${region}`).addEventListener("click", async () => {
      if (!wizard) return;
      try {
        await wizard.upload(region as Region);
        setStatus(`${region} uploaded`);
      } catch (error) {
        setStatus(`${region} upload failed, staged image kept: ` +
          (error instanceof Error ? error.message : String(error)));
      }
      renderWizard();
    });
  }

  el<HTMLInputElement>("override").addEventListener("change", () => {
    wizard?.toggleOverride();
    renderWizard();
  });

  el<HTMLButtonElement>("screen").addEventListener("click", async () => {
    if (!wizard) return;
    try {
      const result = await wizard.runScreening();
      el<HTMLElement>("result").textContent = JSON.stringify(result, null, 2);
      const banners = wizard.banners();
      el<HTMLElement>("banners").textContent =
        banners.length ? banners.join(" | ") : "";
      await refreshTrend();
    } catch (error) {
      if (error instanceof WizardGatingError) setStatus(error.message);
      else setStatus(error instanceof Error ? error.message : String(error));
    }
  });

  el<HTMLButtonElement>("submit-hb").addEventListener("click", async () => {
    if (!wizard) return;
    const hb = Number(el<HTMLInputElement>("lab-hb").value);
    const outcome = await submitTypedHb(api, wizard.patientId, hb);
    showCalibrationOutcome(outcome);
  });

  el<HTMLInputElement>("report-photo").addEventListener("change", async (event) => {
    if (!wizard) return;
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const outcome = await submitReportPhoto(api, wizard.patientId, file, file.name);
    showCalibrationOutcome(outcome);
  });

  function showCalibrationOutcome(outcome: Awaited<ReturnType<typeof submitTypedHb>>): void {
    if (outcome.kind === "accepted") {
      const cal = outcome.receipt.calibration;
      setStatus(`calibration updated: gain ${cal.gain}, offset ${cal.offset}, ` +
        `${cal.n_points} point(s)`);
      void refreshTrend();
    } else {
      setStatus(`${outcome.kind.replace("_", " ")}: ${outcome.message}`);
    }
  }

  async function refreshTrend(): Promise<void> {
    if (!wizard) return;
    const history = await api.getHistory(wizard.patientId);
    const bands = window.HEMASCREEN_THRESHOLD_ROW ??
      { severe_below: 8.0, mild_below: 13.0 };
    const view = buildTrend(history.entries, bands);
    el<HTMLElement>("trend").innerHTML = renderTrendSvg(view);
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
