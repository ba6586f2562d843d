/** Client-side scene store. The server is authoritative: every mutation goes
 * through the API and the response summary replaces local state wholesale
 * (optimistic renders are reconciled away on response). */

import { Api, ApiError } from "./api";
import type {
  AgentSummary,
  GenerateResponse,
  RolloutPayload,
  SceneSummary,
} from "./types";

export interface OptimisticPatch {
  agentId: string;
  x?: number;
  y?: number;
  heading?: number;
  length?: number;
  width?: number;
}

export class SceneStore {
  summary: SceneSummary | null = null;
  rollout: RolloutPayload | null = null;
  lastGenerate: GenerateResponse | null = null;
  selectedAgent: string | null = null;
  optimistic: OptimisticPatch | null = null;
  lastError: string | null = null;
  listeners: (() => void)[] = [];

  constructor(public api: Api) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  get revision(): number {
    return this.summary?.revision ?? -1;
  }

  /** Server response wins over anything rendered optimistically. */
  reconcile(summary: SceneSummary): void {
    this.summary = summary;
    this.optimistic = null;
    this.lastError = null;
    if (this.selectedAgent && !summary.agents.some((a) => a.id === this.selectedAgent)) {
      this.selectedAgent = null;
    }
    this.notify();
  }

  /** Agents as rendered: server state plus any in-flight drag patch. */
  renderedAgents(): AgentSummary[] {
    if (!this.summary) return [];
    if (!this.optimistic) return this.summary.agents;
    return this.summary.agents.map((a) =>
      a.id === this.optimistic!.agentId ? { ...a, ...this.optimistic } : a,
    );
  }

  agent(id: string): AgentSummary | undefined {
    return this.summary?.agents.find((a) => a.id === id);
  }

  setOptimistic(patch: OptimisticPatch): void {
    this.optimistic = patch;
    this.notify();
  }

  private async mutate(fn: () => Promise<SceneSummary>): Promise<boolean> {
    try {
      this.reconcile(await fn());
      return true;
    } catch (e) {
      this.optimistic = null;
      if (e instanceof ApiError && e.status === 409) {
        // concurrent edit: re-sync to the server's state
        if (this.summary) {
          this.reconcile(await this.api.getSummary(this.summary.session_id));
        }
        this.lastError = e.detail;
      } else {
        this.lastError = e instanceof Error ? e.message : String(e);
      }
      this.notify();
      return false;
    }
  }

  async create(scenario: unknown): Promise<void> {
    this.reconcile(await this.api.createSession(scenario));
  }

  async editAgent(
    aid: string,
    patch: Partial<{ x: number; y: number; heading: number; vx: number; vy: number; length: number; width: number }>,
  ): Promise<boolean> {
    if (!this.summary) return false;
    const { session_id, revision } = this.summary;
    return this.mutate(() => this.api.editAgent(session_id, aid, revision, patch));
  }

  async setCondition(
    aid: string,
    cond: { target_x: number; target_y: number; target_speed?: number; target_heading?: number },
  ): Promise<boolean> {
    if (!this.summary) return false;
    const { session_id, revision } = this.summary;
    return this.mutate(() => this.api.setCondition(session_id, aid, revision, cond));
  }

  async clearCondition(aid: string): Promise<boolean> {
    if (!this.summary) return false;
    const { session_id, revision } = this.summary;
    return this.mutate(() => this.api.clearCondition(session_id, aid, revision));
  }

  async addAgent(agent: { agent_type: string; x: number; y: number; heading?: number }): Promise<boolean> {
    if (!this.summary) return false;
    const { session_id, revision } = this.summary;
    return this.mutate(() => this.api.addAgent(session_id, revision, agent));
  }

  async removeAgent(aid: string): Promise<boolean> {
    if (!this.summary) return false;
    const { session_id, revision } = this.summary;
    return this.mutate(() => this.api.removeAgent(session_id, aid, revision));
  }

  async undo(): Promise<boolean> {
    if (!this.summary) return false;
    return this.mutate(() => this.api.undo(this.summary!.session_id));
  }

  async redo(): Promise<boolean> {
    if (!this.summary) return false;
    return this.mutate(() => this.api.redo(this.summary!.session_id));
  }

  async generate(seed: number, replanInterval?: number, horizonSteps?: number): Promise<boolean> {
    if (!this.summary) return false;
    try {
      const res = await this.api.generate(
        this.summary.session_id,
        this.summary.revision,
        seed,
        replanInterval,
        horizonSteps,
      );
      this.lastGenerate = res;
      this.rollout = await this.api.fetchRollout(this.summary.session_id, res.rollout_id);
      this.lastError = null;
      this.notify();
      return true;
    } catch (e) {
      this.lastError = e instanceof Error ? e.message : String(e);
      this.notify();
      return false;
    }
  }
}
