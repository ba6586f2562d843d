/** Thin typed client for the session API. The fetch implementation is
 * injectable so tests can run against an in-memory server. */

import type { GenerateResponse, RolloutPayload, SceneSummary } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class Api {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(this.base + path, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const payload = await res.json();
        detail = payload.detail ?? JSON.stringify(payload);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  createSession(scenario: unknown): Promise<SceneSummary> {
    return this.request("POST", "/sessions", { scenario });
  }

  createSessionFromPath(path: string, index = 0): Promise<SceneSummary> {
    return this.request("POST", "/sessions", { path, index });
  }

  getSummary(sid: string): Promise<SceneSummary> {
    return this.request("GET", `/sessions/${sid}`);
  }

  editAgent(
    sid: string,
    aid: string,
    baseRevision: number,
    patch: Partial<{ x: number; y: number; heading: number; vx: number; vy: number; length: number; width: number }>,
  ): Promise<SceneSummary> {
    return this.request("POST", `/sessions/${sid}/agents/${aid}/edit`, {
      base_revision: baseRevision,
      ...patch,
    });
  }

  addAgent(
    sid: string,
    baseRevision: number,
    agent: { agent_type: string; x: number; y: number; heading?: number; length?: number; width?: number },
  ): Promise<SceneSummary & { agent_id: string }> {
    return this.request("POST", `/sessions/${sid}/agents`, { base_revision: baseRevision, ...agent });
  }

  removeAgent(sid: string, aid: string, baseRevision: number): Promise<SceneSummary> {
    return this.request("DELETE", `/sessions/${sid}/agents/${aid}`, { base_revision: baseRevision });
  }

  setCondition(
    sid: string,
    aid: string,
    baseRevision: number,
    cond: { target_x: number; target_y: number; target_speed?: number; target_heading?: number },
  ): Promise<SceneSummary> {
    return this.request("PUT", `/sessions/${sid}/conditions/${aid}`, { base_revision: baseRevision, ...cond });
  }

  clearCondition(sid: string, aid: string, baseRevision: number): Promise<SceneSummary> {
    return this.request("DELETE", `/sessions/${sid}/conditions/${aid}`, { base_revision: baseRevision });
  }

  undo(sid: string): Promise<SceneSummary> {
    return this.request("POST", `/sessions/${sid}/undo`);
  }

  redo(sid: string): Promise<SceneSummary> {
    return this.request("POST", `/sessions/${sid}/redo`);
  }

  generate(
    sid: string,
    baseRevision: number,
    seed: number,
    replanInterval?: number,
    horizonSteps?: number,
  ): Promise<GenerateResponse> {
    return this.request("POST", `/sessions/${sid}/generate`, {
      base_revision: baseRevision,
      seed,
      replan_interval: replanInterval ?? null,
      horizon_steps: horizonSteps ?? null,
    });
  }

  fetchRollout(sid: string, rid: string): Promise<RolloutPayload> {
    return this.request("GET", `/sessions/${sid}/rollouts/${rid}`);
  }
}
