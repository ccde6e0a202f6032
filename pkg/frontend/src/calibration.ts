/**
 * Calibration entry: submit a lab haemoglobin value, typed or as a report
 * photo that the service runs through OCR.
 *
 * The two failure modes stay distinguishable for the UI: an unreadable
 * report is a parse problem the user can fix with a better photo, while a
 * transport problem means the service (or its OCR backend) is unreachable.
 */

import { ApiClient, ReportReceipt, ServiceApiError, TransportError } from "./api.js";

export type CalibrationOutcome =
  | { kind: "accepted"; receipt: ReportReceipt }
  | { kind: "parse_error"; message: string }
  | { kind: "transport_error"; message: string }
  | { kind: "rejected"; message: string };

function classify(error: unknown): CalibrationOutcome {
  if (error instanceof ServiceApiError) {
    if (error.body.code === "unparseable_report") {
      return { kind: "parse_error", message: error.body.message };
    }
    if (error.body.code === "ocr_transport") {
      return { kind: "transport_error", message: error.body.message };
    }
    return { kind: "rejected", message: error.body.message };
  }
  if (error instanceof TransportError) {
    return { kind: "transport_error", message: error.message };
  }
  throw error;
}

export async function submitTypedHb(
  api: ApiClient,
  patientId: string,
  hb: number,
): Promise<CalibrationOutcome> {
  try {
    return { kind: "accepted", receipt: await api.submitTypedReport(patientId, { hb }) };
  } catch (error) {
    return classify(error);
  }
}

export async function submitReportPhoto(
  api: ApiClient,
  patientId: string,
  image: Blob,
  fileName: string,
): Promise<CalibrationOutcome> {
  try {
    return { kind: "accepted", receipt: await api.submitReportImage(patientId, image, fileName) };
  } catch (error) {
    return classify(error);
  }
}
