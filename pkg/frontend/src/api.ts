/**
 * Typed client for the control server's HTTP surface.
 *
 * The dashboard mutates state only through the documented POST endpoints
 * and works unchanged against the read-only replay server (whose POSTs
 * answer 405).
 */

export interface MetricsRecord {
  time: number;
  quantumIndex: number | null;
  clique: string | null;
  rate: number | null;
  average: number | null;
  degradation: number | null;
  violation: boolean | null;
  eventTag: string | null;
}

export interface EventEntry {
  time: number;
  tag: string;
  detail: string;
}

export interface ContractSettings {
  quantumSeconds: number;
  degradationThreshold: number;
  consecutiveRequired: number;
}

export interface StatusSnapshot {
  runId?: string;
  status?: string;
  clique?: string | null;
  iteration?: number | null;
  contract?: ContractSettings;
  consecutiveViolations?: number;
  records?: number; // replay server
}

export interface ResourceRow {
  name: string;
  ad: string;
  rank: number;
  current: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

export class ControlApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path);
    if (!resp.ok) throw new ApiError(resp.status, await describeError(resp));
    return (await resp.json()) as T;
  }

  private async post<T>(path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? "{}" : JSON.stringify(body),
    });
    if (!resp.ok) throw new ApiError(resp.status, await describeError(resp));
    return (await resp.json()) as T;
  }

  status(): Promise<StatusSnapshot> {
    return this.get("/status");
  }

  /** Incremental poll: pass the count of records already held. */
  metrics(since = 0): Promise<MetricsRecord[]> {
    return this.get(`/metrics?since=${since}`);
  }

  events(since = 0): Promise<EventEntry[]> {
    return this.get(`/events?since=${since}`);
  }

  resources(): Promise<ResourceRow[]> {
    return this.get("/resources");
  }

  setContract(settings: ContractSettings): Promise<{ accepted: boolean }> {
    return this.post("/contract", settings);
  }

  migrate(target?: string): Promise<{ accepted: boolean }> {
    return this.post("/migrate", target === undefined ? {} : { target });
  }

  pause(): Promise<{ accepted: boolean }> {
    return this.post("/pause");
  }

  resume(): Promise<{ accepted: boolean }> {
    return this.post("/resume");
  }
}

async function describeError(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    if (body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    // fall through: non-JSON error body
  }
  return `HTTP ${resp.status}`;
}
