/** Payload types mirroring the service API schemas. */

export interface AgentSummary {
  id: string;
  type: string;
  x: number;
  y: number;
  heading: number;
  vx: number;
  vy: number;
  speed: number;
  length: number;
  width: number;
  valid: boolean;
  history: [number, number][];
}

export interface LaneSummary {
  id: string;
  points: [number, number][];
  attributes: number[][]; // per point: [lane, intersection, crosswalk, edge]
}

export interface ConditionSummary {
  target_x: number;
  target_y: number;
  target_speed: number;
  target_heading: number;
  length: number;
  width: number;
}

export interface SceneSummary {
  session_id: string;
  revision: number;
  scenario_id: string;
  ego_id: string;
  dt: number;
  map: { lanes: LaneSummary[] };
  agents: AgentSummary[];
  conditions: Record<string, ConditionSummary>;
}

export interface RolloutAgent {
  id: string;
  expert: string;
  chosen_index: number;
  condition: {
    target: [number, number];
    speed: number;
    heading: number;
    length: number;
    width: number;
    valid: boolean;
  } | null;
  trajectory: [number, number][];
  headings: number[];
  modes: [number, number][][];
  scores: number[];
}

export interface RolloutPayload {
  rollout_id: string;
  scenario_id: string;
  seed: number;
  replan_interval: number | null;
  agents: RolloutAgent[];
  summary: GenerateSummary;
}

export interface AgentGenerateSummary {
  agent_id: string;
  expert: string;
  chosen_index: number;
  endpoint: [number, number];
  target: [number, number] | null;
  endpoint_error: number | null;
}

export interface GenerateSummary {
  agents: AgentGenerateSummary[];
  scr_percent: number;
  seed: number;
  replan_interval: number | null;
}

export interface GenerateResponse {
  rollout_id: string;
  revision: number;
  summary: GenerateSummary;
  cached: boolean;
}

export interface PushEvent {
  id: number;
  kind: string;
  [key: string]: unknown;
}

export type EditMode = "move" | "rotate" | "resize" | "set-target";
