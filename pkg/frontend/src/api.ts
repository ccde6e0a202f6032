/**
 * Typed client for the hemascreen monitoring service.
 *
 * Every number shown in the UI (haemoglobin, severity, calibration) comes
 * verbatim from these responses; the client computes nothing itself.
 * Service-side failures carry a {code, message, stage} body and surface as
 * ServiceApiError; network failures surface as TransportError so the UI can
 * tell "the report was unreadable" apart from "the service is down".
 */

export type Region = "nailbed" | "conjunctiva" | "tongue";
export const REGIONS: readonly Region[] = ["nailbed", "conjunctiva", "tongue"];

export type Severity = "severe" | "mild" | "non_anaemic";

export interface ErrorBody {
  code: string;
  message: string;
  stage: string;
}

export class ServiceApiError extends Error {
  constructor(readonly status: number, readonly body: ErrorBody) {
    super(`${body.stage}: ${body.message}`);
    this.name = "ServiceApiError";
  }
}

export class TransportError extends Error {
  constructor(message: string, readonly cause?: unknown) {
    super(message);
    this.name = "TransportError";
  }
}

export interface Calibration {
  gain: number;
  offset: number;
  n_points: number;
}

export interface PatientRecord {
  id: string;
  age_years: number;
  sex: "female" | "male";
  pregnant: boolean;
  altitude_m: number;
  created_at: string;
  calibration: Calibration;
}

export interface RegionOutcome {
  class: Severity | null;
  probabilities: number[] | null;
  area_fraction: number;
  roi_confident: boolean;
  valid: boolean;
  illumination_corrected: boolean;
}

export interface Screening {
  screening_id: string;
  patient_id: string;
  ts: string;
  bundle_version: number;
  raw_hb: number;
  calibrated_hb: number;
  severity: Severity;
  fused_class: Severity;
  flags: string[];
  per_region: Record<string, RegionOutcome | null>;
  calibration: Calibration;
}

export interface CaptureReceipt {
  capture_id: string;
  blob: string;
  region: Region;
}

export interface ReportReceipt {
  calibration: Calibration;
  queued_for_training: boolean;
  paired_screening: string | null;
}

export interface ScreeningHistoryEntry {
  kind: "screening";
  timestamp: string;
  screening_id: string;
  raw_hb: number;
  calibrated_hb: number;
  severity: Severity;
  fused_class: Severity;
  flags: string[];
  bundle_version: number;
  per_region: Record<string, RegionOutcome | null>;
}

export interface LabReportHistoryEntry {
  kind: "lab_report";
  timestamp: string;
  hb: number;
  hct: number | null;
  mcv: number | null;
  source: string;
}

export type HistoryEntry = ScreeningHistoryEntry | LabReportHistoryEntry;

export interface History {
  patient_id: string;
  entries: HistoryEntry[];
}

export interface ThresholdRow {
  severe_below: number;
  mild_below: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ApiClientOptions {
  baseUrl: string;
  fetchImpl?: FetchLike;
  apiToken?: string;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;
  private readonly apiToken?: string;

  constructor(options: ApiClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/$/, "");
    this.fetchImpl = options.fetchImpl ?? ((url, init) => fetch(url, init));
    this.apiToken = options.apiToken;
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const headers = new Headers(init.headers);
    if (this.apiToken) headers.set("X-Api-Token", this.apiToken);
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, { ...init, headers });
    } catch (cause) {
      throw new TransportError(`cannot reach service at ${this.baseUrl}`, cause);
    }
    if (!response.ok) {
      let body: ErrorBody;
      try {
        body = (await response.json()) as ErrorBody;
      } catch {
        body = { code: "http_error", message: response.statusText, stage: "transport" };
      }
      throw new ServiceApiError(response.status, body);
    }
    return (await response.json()) as T;
  }

  createPatient(patient: {
    id: string;
    age_years: number;
    sex: "female" | "male";
    pregnant?: boolean;
    altitude_m?: number;
  }): Promise<PatientRecord> {
    return this.request("/patients", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(patient),
    });
  }

  getPatient(patientId: string): Promise<PatientRecord> {
    return this.request(`/patients/${encodeURIComponent(patientId)}`);
  }

  uploadCapture(patientId: string, region: Region, image: Blob, fileName: string): Promise<CaptureReceipt> {
    const form = new FormData();
    form.set("region", region);
    form.set("image", image, fileName);
    return this.request(`/patients/${encodeURIComponent(patientId)}/captures`, {
      method: "POST",
      body: form,
    });
  }

  runScreening(patientId: string): Promise<Screening> {
    return this.request(`/patients/${encodeURIComponent(patientId)}/screenings`, {
      method: "POST",
    });
  }

  submitTypedReport(
    patientId: string,
    report: { hb: number; hct?: number; mcv?: number; timestamp?: string },
  ): Promise<ReportReceipt> {
    return this.request(`/patients/${encodeURIComponent(patientId)}/reports`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(report),
    });
  }

  submitReportImage(patientId: string, image: Blob, fileName: string): Promise<ReportReceipt> {
    const form = new FormData();
    form.set("image", image, fileName);
    return this.request(`/patients/${encodeURIComponent(patientId)}/reports`, {
      method: "POST",
      body: form,
    });
  }

  getHistory(patientId: string): Promise<History> {
    return this.request(`/patients/${encodeURIComponent(patientId)}/history`);
  }
}
