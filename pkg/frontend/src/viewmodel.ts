/**
 * Dashboard view model: polled state plus the two mutation paths
 * (contract form, manual migrate).  No DOM here -- widgets render from the
 * snapshot this class maintains, and all server access goes through the
 * typed API client.
 */

import {
  ApiError,
  ControlApi,
  type ContractSettings,
  type EventEntry,
  type MetricsRecord,
  type ResourceRow,
  type StatusSnapshot,
} from "./api.js";

export interface DashboardState {
  status: StatusSnapshot;
  metrics: MetricsRecord[];
  events: EventEntry[];
  resources: ResourceRow[];
  lastError: string | null;
}

/** Client-side validation mirroring the server's contract constraints. */
export function validateContract(form: ContractSettings): string[] {
  const problems: string[] = [];
  if (!(form.quantumSeconds > 0)) {
    problems.push("quantum length must be positive");
  }
  if (!(form.degradationThreshold > 0 && form.degradationThreshold < 1)) {
    problems.push("degradation threshold must be between 0 and 1");
  }
  if (!(Number.isInteger(form.consecutiveRequired) && form.consecutiveRequired >= 1)) {
    problems.push("consecutive violations required must be a positive integer");
  }
  return problems;
}

export class Dashboard {
  readonly state: DashboardState = {
    status: {},
    metrics: [],
    events: [],
    resources: [],
    lastError: null,
  };

  constructor(private readonly api: ControlApi) {}

  /**
   * One polling round trip.  Metrics and events are fetched incrementally
   * with a `since` cursor so the server only ships what is new.
   */
  async refresh(): Promise<void> {
    try {
      const [status, newMetrics, newEvents, resources] = await Promise.all([
        this.api.status(),
        this.api.metrics(this.state.metrics.length),
        this.api.events(this.state.events.length),
        this.api.resources(),
      ]);
      this.state.status = status;
      this.state.metrics.push(...newMetrics);
      this.state.events.push(...newEvents);
      this.state.resources = resources;
      this.state.lastError = null;
    } catch (err) {
      this.state.lastError = describe(err);
    }
  }

  /** Submit the contract form; invalid forms never reach the server. */
  async submitContract(form: ContractSettings): Promise<string[]> {
    const problems = validateContract(form);
    if (problems.length > 0) return problems;
    try {
      await this.api.setContract(form);
      return [];
    } catch (err) {
      return [describe(err)];
    }
  }

  /** Manual migration from the clique table; target from a live row. */
  async migrateTo(target: string): Promise<string | null> {
    if (this.state.status.status !== "RUNNING") {
      return "run is not RUNNING";
    }
    try {
      await this.api.migrate(target);
      return null;
    } catch (err) {
      return describe(err);
    }
  }

  /** Rows for the clique table, current clique first, then by rank. */
  cliqueRows(): ResourceRow[] {
    return [...this.state.resources].sort((a, b) => {
      if (a.current !== b.current) return a.current ? -1 : 1;
      if (a.rank !== b.rank) return b.rank - a.rank;
      return a.name.localeCompare(b.name);
    });
  }

  /** Newest-first event feed for the sidebar. */
  eventFeed(limit = 50): EventEntry[] {
    return [...this.state.events].reverse().slice(0, limit);
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.status}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}
