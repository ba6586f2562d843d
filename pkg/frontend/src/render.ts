/** Immediate-mode canvas rendering of vector scenes. Draw functions depend
 * only on the 2D-context subset below, so tests can record calls. */

import type { Camera } from "./camera";
import { agentCorners } from "./hitTest";
import type { AgentSummary, LaneSummary, RolloutPayload, SceneSummary } from "./types";

export interface Ctx2D {
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
}

const LANE_COLORS = ["#8a929e", "#c678dd", "#56b6c2", "#5c6370"]; // lane, intersection, crosswalk, edge
const TYPE_COLORS: Record<string, string> = {
  vehicle: "#61afef",
  pedestrian: "#e5c07b",
  cyclist: "#98c379",
};
const MODE_ALPHA = 0.35;

function laneColor(lane: LaneSummary): string {
  const attrs = lane.attributes[0] ?? [1, 0, 0, 0];
  const idx = attrs.findIndex((v) => v > 0.5);
  return LANE_COLORS[idx >= 0 ? idx : 0];
}

export function drawLanes(ctx: Ctx2D, cam: Camera, lanes: LaneSummary[]): void {
  for (const lane of lanes) {
    ctx.strokeStyle = laneColor(lane);
    ctx.lineWidth = 1;
    ctx.setLineDash(lane.attributes[0]?.[2] ? [4, 4] : []);
    ctx.beginPath();
    lane.points.forEach(([x, y], i) => {
      const p = cam.worldToScreen({ x, y });
      if (i === 0) ctx.moveTo(p.x, p.y);
      else ctx.lineTo(p.x, p.y);
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

export function drawAgentBox(ctx: Ctx2D, cam: Camera, agent: AgentSummary, selected: boolean): void {
  const corners = agentCorners(agent).map((p) => cam.worldToScreen(p));
  ctx.beginPath();
  corners.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
  ctx.closePath();
  ctx.fillStyle = TYPE_COLORS[agent.type] ?? "#abb2bf";
  ctx.globalAlpha = agent.valid ? 0.85 : 0.3;
  ctx.fill();
  ctx.globalAlpha = 1;
  ctx.strokeStyle = selected ? "#ffffff" : "#282c34";
  ctx.lineWidth = selected ? 2 : 1;
  ctx.stroke();
  // heading arrow
  const tip = cam.worldToScreen({
    x: agent.x + Math.cos(agent.heading) * agent.length * 0.7,
    y: agent.y + Math.sin(agent.heading) * agent.length * 0.7,
  });
  const center = cam.worldToScreen({ x: agent.x, y: agent.y });
  ctx.beginPath();
  ctx.moveTo(center.x, center.y);
  ctx.lineTo(tip.x, tip.y);
  ctx.strokeStyle = selected ? "#ffffff" : "#282c34";
  ctx.stroke();
}

export function drawHistoryShadow(ctx: Ctx2D, cam: Camera, agent: AgentSummary): void {
  if (agent.history.length < 2) return;
  ctx.beginPath();
  agent.history.forEach(([x, y], i) => {
    const p = cam.worldToScreen({ x, y });
    if (i === 0) ctx.moveTo(p.x, p.y);
    else ctx.lineTo(p.x, p.y);
  });
  ctx.strokeStyle = "#4b5263";
  ctx.lineWidth = 2;
  ctx.globalAlpha = 0.6;
  ctx.stroke();
  ctx.globalAlpha = 1;
}

/** Trajectory dots ahead of each agent; the playback cursor caps how many. */
export function drawRollout(ctx: Ctx2D, cam: Camera, rollout: RolloutPayload, cursor: number): void {
  for (const agent of rollout.agents) {
    ctx.fillStyle = TYPE_COLORS[agentTypeOf(agent.expert)] ?? "#abb2bf";
    // alternate modes, faint
    ctx.globalAlpha = MODE_ALPHA;
    agent.modes.forEach((mode, k) => {
      if (k === agent.chosen_index) return;
      for (let t = 4; t < mode.length; t += 5) {
        const p = cam.worldToScreen({ x: mode[t][0], y: mode[t][1] });
        ctx.fillRect(p.x - 1, p.y - 1, 2, 2);
      }
    });
    ctx.globalAlpha = 1;
    // chosen trajectory, up to the cursor
    const upto = Math.min(cursor, agent.trajectory.length - 1);
    for (let t = 0; t <= upto; t += 2) {
      const p = cam.worldToScreen({ x: agent.trajectory[t][0], y: agent.trajectory[t][1] });
      ctx.beginPath();
      ctx.arc(p.x, p.y, 2, 0, Math.PI * 2);
      ctx.fill();
    }
    // endpoint marker
    const end = agent.trajectory[agent.trajectory.length - 1];
    const pe = cam.worldToScreen({ x: end[0], y: end[1] });
    ctx.beginPath();
    ctx.arc(pe.x, pe.y, 4, 0, Math.PI * 2);
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 1;
    ctx.stroke();
  }
}

function agentTypeOf(expertId: string): string {
  return expertId.replace(/_expert$/, "");
}

export function drawTargets(ctx: Ctx2D, cam: Camera, summary: SceneSummary): void {
  for (const [aid, cond] of Object.entries(summary.conditions)) {
    const p = cam.worldToScreen({ x: cond.target_x, y: cond.target_y });
    ctx.strokeStyle = "#e06c75";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(p.x, p.y, 6, 0, Math.PI * 2);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(p.x - 9, p.y);
    ctx.lineTo(p.x + 9, p.y);
    ctx.moveTo(p.x, p.y - 9);
    ctx.lineTo(p.x, p.y + 9);
    ctx.stroke();
    const agent = summary.agents.find((a) => a.id === aid);
    if (agent) {
      const from = cam.worldToScreen({ x: agent.x, y: agent.y });
      ctx.setLineDash([3, 5]);
      ctx.beginPath();
      ctx.moveTo(from.x, from.y);
      ctx.lineTo(p.x, p.y);
      ctx.stroke();
      ctx.setLineDash([]);
    }
    ctx.fillStyle = "#e06c75";
    ctx.font = "11px sans-serif";
    ctx.fillText(aid, p.x + 8, p.y - 8);
  }
}

/** Scale bar: a round number of meters that fits ~120 px. */
export function scaleBarMeters(pxPerMeter: number, targetPx = 120): number {
  const raw = targetPx / pxPerMeter;
  const pow = Math.pow(10, Math.floor(Math.log10(raw)));
  for (const mult of [5, 2, 1]) {
    if (pow * mult <= raw) return pow * mult;
  }
  return pow;
}

export function drawScaleBar(ctx: Ctx2D, cam: Camera): void {
  const meters = scaleBarMeters(cam.pxPerMeter);
  const px = meters * cam.pxPerMeter;
  const x0 = 16;
  const y0 = cam.viewportH - 20;
  ctx.strokeStyle = "#abb2bf";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(x0, y0);
  ctx.lineTo(x0 + px, y0);
  ctx.stroke();
  ctx.fillStyle = "#abb2bf";
  ctx.font = "11px sans-serif";
  ctx.fillText(`${meters} m`, x0 + px / 2 - 10, y0 - 6);
}

export function drawScene(
  ctx: Ctx2D,
  cam: Camera,
  summary: SceneSummary,
  agents: AgentSummary[],
  rollout: RolloutPayload | null,
  selected: string | null,
  cursor: number,
): void {
  drawLanes(ctx, cam, summary.map.lanes);
  for (const agent of agents) drawHistoryShadow(ctx, cam, agent);
  if (rollout) drawRollout(ctx, cam, rollout, cursor);
  for (const agent of agents) drawAgentBox(ctx, cam, agent, agent.id === selected);
  drawTargets(ctx, cam, summary);
  drawScaleBar(ctx, cam);
}
