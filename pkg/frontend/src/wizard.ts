/**
 * Guided three-region capture wizard.
 *
 * Images are staged locally first, then uploaded one by one; a failed or
 * unreachable upload keeps the staged image so nothing is lost to a flaky
 * connection. Screening stays locked until all three regions are uploaded,
 * unless the user explicitly accepts a reduced-confidence result.
 */

import { ApiClient, REGIONS, Region, Screening } from "./api.js";

export type SlotState =
  | { status: "empty" }
  | { status: "staged"; image: Blob; fileName: string; lastError?: string }
  | { status: "uploaded"; captureId: string; fileName: string };

export const CAPTURE_GUIDANCE: Record<Region, string> = {
  conjunctiva:
    "Pull the lower eyelid down gently so as much of the inner membrane as " +
    "possible is visible, then photograph it without flash.",
  nailbed:
    "Photograph the fingernail beds of both hands; polish-free nails, all " +
    "fingers in frame, even daylight.",
  tongue:
    "Clean the tongue first, extend it fully and photograph the upper " +
    "surface under even light.",
};

export class WizardGatingError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "WizardGatingError";
  }
}

export class CaptureWizard {
  readonly slots: Record<Region, SlotState>;
  overrideReducedConfidence = false;
  stepIndex = 0;
  result: Screening | null = null;

  constructor(private readonly api: ApiClient, readonly patientId: string) {
    this.slots = {
      nailbed: { status: "empty" },
      conjunctiva: { status: "empty" },
      tongue: { status: "empty" },
    };
  }

  guidance(): string {
    return CAPTURE_GUIDANCE[REGIONS[this.stepIndex % REGIONS.length]];
  }

  stage(region: Region, image: Blob, fileName: string): void {
    this.slots[region] = { status: "staged", image, fileName };
  }

  uploadedCount(): number {
    return REGIONS.filter((r) => this.slots[r].status === "uploaded").length;
  }

  /** Screening unlocks with all three uploads, or >= 1 upload plus the override. */
  canScreen(): boolean {
    const uploaded = this.uploadedCount();
    if (uploaded === REGIONS.length) return true;
    return this.overrideReducedConfidence && uploaded >= 1;
  }

  toggleOverride(): void {
    this.overrideReducedConfidence = !this.overrideReducedConfidence;
  }

  async upload(region: Region): Promise<void> {
    const slot = this.slots[region];
    if (slot.status !== "staged") {
      throw new WizardGatingError(`no staged image for ${region}`);
    }
    try {
      const receipt = await this.api.uploadCapture(
        this.patientId, region, slot.image, slot.fileName,
      );
      this.slots[region] = {
        status: "uploaded",
        captureId: receipt.capture_id,
        fileName: slot.fileName,
      };
      this.stepIndex = Math.min(this.stepIndex + 1, REGIONS.length - 1);
    } catch (error) {
      // keep the staged image for retry; only annotate the failure
      this.slots[region] = {
        ...slot,
        lastError: error instanceof Error ? error.message : String(error),
      };
      throw error;
    }
  }

  async runScreening(): Promise<Screening> {
    if (!this.canScreen()) {
      const missing = REGIONS.filter((r) => this.slots[r].status !== "uploaded");
      throw new WizardGatingError(
        `screening locked: upload ${missing.join(", ")} or accept a ` +
        "reduced-confidence result",
      );
    }
    this.result = await this.api.runScreening(this.patientId);
    return this.result;
  }

  /** Banner text comes straight from the API's flags; nothing is computed here. */
  banners(): string[] {
    return this.result ? [...this.result.flags] : [];
  }
}
