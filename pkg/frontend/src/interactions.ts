/** Pointer-drag state machine. During a drag the store renders optimistic
 * positions; releasing issues the edit/condition call and the server response
 * reconciles the scene. */

import type { Camera, Point } from "./camera";
import { agentAt, nearPoint } from "./hitTest";
import type { SceneStore } from "./sceneState";
import type { EditMode } from "./types";

interface DragState {
  agentId: string;
  mode: EditMode;
  startWorld: Point;
  startAgent: { x: number; y: number; heading: number; length: number; width: number };
  moved: boolean;
}

export class Interactions {
  mode: EditMode = "move";
  private drag: DragState | null = null;
  private panning: { lastX: number; lastY: number } | null = null;

  constructor(
    private store: SceneStore,
    private camera: Camera,
  ) {}

  get dragging(): boolean {
    return this.drag !== null;
  }

  pointerDown(screen: Point, button = 0): void {
    if (!this.store.summary) return;
    if (button !== 0) {
      this.panning = { lastX: screen.x, lastY: screen.y };
      return;
    }
    const world = this.camera.screenToWorld(screen);
    const grabSlack = 4 / this.camera.pxPerMeter;
    const agents = this.store.renderedAgents();

    if (this.mode === "set-target") {
      // grab an existing target marker first, else pick the agent to target
      const conditions = this.store.summary.conditions;
      for (const [aid, cond] of Object.entries(conditions)) {
        if (nearPoint(world, { x: cond.target_x, y: cond.target_y }, Math.max(2, grabSlack))) {
          this.beginDrag(aid, world);
          return;
        }
      }
      const hit = agentAt(world, agents, grabSlack);
      if (hit) this.beginDrag(hit.id, world);
      return;
    }

    const hit = agentAt(world, agents, grabSlack);
    if (hit) {
      this.store.selectedAgent = hit.id;
      this.beginDrag(hit.id, world);
    } else {
      this.store.selectedAgent = null;
      this.panning = { lastX: screen.x, lastY: screen.y };
    }
  }

  private beginDrag(agentId: string, world: Point): void {
    const agent = this.store.agent(agentId);
    if (!agent) return;
    this.drag = {
      agentId,
      mode: this.mode,
      startWorld: world,
      startAgent: { x: agent.x, y: agent.y, heading: agent.heading, length: agent.length, width: agent.width },
      moved: false,
    };
  }

  pointerMove(screen: Point): void {
    if (this.panning) {
      this.camera.panByScreen(screen.x - this.panning.lastX, screen.y - this.panning.lastY);
      this.panning = { lastX: screen.x, lastY: screen.y };
      return;
    }
    if (!this.drag) return;
    const world = this.camera.screenToWorld(screen);
    const d = this.drag;
    d.moved = true;
    if (d.mode === "move") {
      this.store.setOptimistic({
        agentId: d.agentId,
        x: d.startAgent.x + (world.x - d.startWorld.x),
        y: d.startAgent.y + (world.y - d.startWorld.y),
      });
    } else if (d.mode === "rotate") {
      const heading = Math.atan2(world.y - d.startAgent.y, world.x - d.startAgent.x);
      this.store.setOptimistic({ agentId: d.agentId, heading });
    } else if (d.mode === "resize") {
      const dx = world.x - d.startAgent.x;
      const dy = world.y - d.startAgent.y;
      const c = Math.cos(d.startAgent.heading);
      const s = Math.sin(d.startAgent.heading);
      const lon = Math.abs(dx * c + dy * s) * 2;
      const lat = Math.abs(-dx * s + dy * c) * 2;
      const width = Math.max(0.4, lat);
      this.store.setOptimistic({
        agentId: d.agentId,
        length: Math.max(width, lon),
        width,
      });
    }
    // set-target renders via pendingTarget()
  }

  /** Target marker position while dragging in set-target mode. */
  pendingTarget(screen: Point): Point | null {
    if (!this.drag || this.drag.mode !== "set-target") return null;
    return this.camera.screenToWorld(screen);
  }

  /** Release: flush the drag as a server mutation. Resolves when the server
   * round-trip completes (tests await this). */
  async pointerUp(screen: Point): Promise<void> {
    this.panning = null;
    const d = this.drag;
    this.drag = null;
    if (!d || !this.store.summary) return;
    const world = this.camera.screenToWorld(screen);
    if (!d.moved) return;
    if (d.mode === "move") {
      await this.store.editAgent(d.agentId, {
        x: d.startAgent.x + (world.x - d.startWorld.x),
        y: d.startAgent.y + (world.y - d.startWorld.y),
      });
    } else if (d.mode === "rotate") {
      const heading = Math.atan2(world.y - d.startAgent.y, world.x - d.startAgent.x);
      await this.store.editAgent(d.agentId, { heading });
    } else if (d.mode === "resize") {
      const dx = world.x - d.startAgent.x;
      const dy = world.y - d.startAgent.y;
      const c = Math.cos(d.startAgent.heading);
      const s = Math.sin(d.startAgent.heading);
      const lat = Math.max(0.4, Math.abs(-dx * s + dy * c) * 2);
      await this.store.editAgent(d.agentId, {
        length: Math.max(lat, Math.abs(dx * c + dy * s) * 2),
        width: lat,
      });
    } else {
      const agent = this.store.agent(d.agentId);
      await this.store.setCondition(d.agentId, {
        target_x: world.x,
        target_y: world.y,
        target_speed: agent?.speed ?? 0,
        target_heading: Math.atan2(world.y - d.startAgent.y, world.x - d.startAgent.x),
      });
    }
  }
}
