import { describe, expect, it } from "vitest";

import { REGIONS, Region, TransportError } from "../src/api.js";
import { CaptureWizard, WizardGatingError } from "../src/wizard.js";
import { clientWith, jsonResponse, pngBlob } from "./helpers.js";

const SCREENING = {
  screening_id: "scr-9",
  patient_id: "p1",
  ts: "2026-04-01T10:00:00+00:00",
  bundle_version: 1,
  raw_hb: 11.2,
  calibrated_hb: 11.2,
  severity: "mild",
  fused_class: "mild",
  flags: ["reduced_confidence", "missing_region:tongue"],
  per_region: {},
  calibration: { gain: 1, offset: 0, n_points: 0 },
};

function healthyClient() {
  let captureSeq = 0;
  return clientWith((url, init) => {
    if (url.endsWith("/captures") && init?.method === "POST") {
      captureSeq += 1;
      return jsonResponse(
        { capture_id: `cap-${captureSeq}`, blob: "d0d0", region: "nailbed" }, 201);
    }
    if (url.endsWith("/screenings")) return jsonResponse(SCREENING, 201);
    return jsonResponse({ code: "not_found", message: "nope", stage: "test" }, 404);
  });
}

async function stageAndUpload(wizard: CaptureWizard, region: Region) {
  wizard.stage(region, pngBlob(region), `${region}.png`);
  await wizard.upload(region);
}

describe("wizard gating", () => {
  it("locks screening until all three regions are uploaded", async () => {
    const { api } = healthyClient();
    const wizard = new CaptureWizard(api, "p1");
    expect(wizard.canScreen()).toBe(false);
    await expect(wizard.runScreening()).rejects.toBeInstanceOf(WizardGatingError);

    await stageAndUpload(wizard, "nailbed");
    expect(wizard.canScreen()).toBe(false);
    await stageAndUpload(wizard, "conjunctiva");
    expect(wizard.canScreen()).toBe(false);
    await expect(wizard.runScreening()).rejects.toThrow(/tongue/);

    await stageAndUpload(wizard, "tongue");
    expect(wizard.canScreen()).toBe(true);
    const result = await wizard.runScreening();
    expect(result.screening_id).toBe("scr-9");
  });

  it("explicit override unlocks screening with fewer regions", async () => {
    const { api } = healthyClient();
    const wizard = new CaptureWizard(api, "p1");
    await stageAndUpload(wizard, "nailbed");
    await stageAndUpload(wizard, "conjunctiva");
    expect(wizard.canScreen()).toBe(false);
    wizard.toggleOverride();
    expect(wizard.canScreen()).toBe(true);
    const result = await wizard.runScreening();
    // banners come verbatim from the API flags
    expect(wizard.banners()).toEqual(["reduced_confidence", "missing_region:tongue"]);
    expect(result.flags).toContain("reduced_confidence");
  });

  it("override alone does not unlock an empty wizard", () => {
    const { api } = healthyClient();
    const wizard = new CaptureWizard(api, "p1");
    wizard.toggleOverride();
    expect(wizard.canScreen()).toBe(false);
  });

  it("staging alone is not uploading", () => {
    const { api } = healthyClient();
    const wizard = new CaptureWizard(api, "p1");
    for (const region of REGIONS) wizard.stage(region, pngBlob(region), `${region}.png`);
    expect(wizard.uploadedCount()).toBe(0);
    expect(wizard.canScreen()).toBe(false);
  });
});

describe("wizard outage resilience", () => {
  it("keeps the staged image when the service is unreachable, then retries", async () => {
    let healthy = false;
    const { api } = clientWith((url, init) => {
      if (!healthy) throw new Error("connection refused");
      if (url.endsWith("/captures") && init?.method === "POST") {
        return jsonResponse({ capture_id: "cap-1", blob: "aa", region: "nailbed" }, 201);
      }
      return jsonResponse({}, 200);
    });
    const wizard = new CaptureWizard(api, "p1");
    const image = pngBlob("nailbed");
    wizard.stage("nailbed", image, "nailbed.png");

    await expect(wizard.upload("nailbed")).rejects.toBeInstanceOf(TransportError);
    const slot = wizard.slots.nailbed;
    expect(slot.status).toBe("staged");
    if (slot.status === "staged") {
      expect(slot.image).toBe(image); // the exact staged blob survives
      expect(slot.lastError).toMatch(/cannot reach/);
    }

    healthy = true;
    await wizard.upload("nailbed");
    expect(wizard.slots.nailbed.status).toBe("uploaded");
  });

  it("keeps the staged image on a service-side error too", async () => {
    const { api } = clientWith(() =>
      jsonResponse({ code: "invalid", message: "bad image", stage: "captures" }, 422));
    const wizard = new CaptureWizard(api, "p1");
    wizard.stage("tongue", pngBlob("tongue"), "tongue.png");
    await expect(wizard.upload("tongue")).rejects.toThrow(/bad image/);
    expect(wizard.slots.tongue.status).toBe("staged");
  });
});
