import { ApiClient, FetchLike } from "../src/api.js";

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface RecordedCall {
  url: string;
  init?: RequestInit;
}

/** fetch stub driven by a handler; records every call it sees. */
export function makeStub(
  handler: (url: string, init?: RequestInit) => Response | Promise<Response>,
): { fetchImpl: FetchLike; calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const fetchImpl: FetchLike = async (url, init) => {
    calls.push({ url, init });
    return handler(url, init);
  };
  return { fetchImpl, calls };
}

export function clientWith(
  handler: (url: string, init?: RequestInit) => Response | Promise<Response>,
  apiToken?: string,
): { api: ApiClient; calls: RecordedCall[] } {
  const { fetchImpl, calls } = makeStub(handler);
  return { api: new ApiClient({ baseUrl: "http://svc.test", fetchImpl, apiToken }), calls };
}

export function pngBlob(tag: string): Blob {
  return new Blob([`fake-png-${tag}`], { type: "image/png" });
}
