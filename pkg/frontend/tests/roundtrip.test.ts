/** UI round-trip acceptance: drag-edit -> generate -> the rendered rollout
 * endpoint marker sits within the server-reported tolerance of the condition
 * target, and undo/redo restore exact server state. */
import { beforeEach, describe, expect, it } from "vitest";

import { Api } from "../src/api";
import { Camera } from "../src/camera";
import { Interactions } from "../src/interactions";
import { Playback } from "../src/playback";
import { SceneStore } from "../src/sceneState";
import { FakeServer } from "./fakeServer";

describe("UI round-trip (acceptance)", () => {
  let server: FakeServer;
  let store: SceneStore;
  let camera: Camera;
  let ix: Interactions;

  beforeEach(async () => {
    server = new FakeServer(undefined, 0.8);
    store = new SceneStore(new Api("", server.fetch));
    await store.create({});
    camera = new Camera();
    camera.viewportW = 800;
    camera.viewportH = 600;
    camera.pxPerMeter = 8;
    ix = new Interactions(store, camera);
  });

  const screenOf = (wx: number, wy: number) => camera.worldToScreen({ x: wx, y: wy });

  it("drag-edit, set target, generate: endpoint within reported tolerance", async () => {
    // drag the ego 10 m forward
    ix.mode = "move";
    ix.pointerDown(screenOf(0, 0));
    ix.pointerMove(screenOf(10, 0));
    await ix.pointerUp(screenOf(10, 0));
    expect(server.summary().agents.find((a) => a.id === "ego")!.x).toBeCloseTo(10, 6);

    // two-gesture conditioning: drag a target 100 m ahead
    ix.mode = "set-target";
    ix.pointerDown(screenOf(10, 0));
    ix.pointerMove(screenOf(110, 0));
    await ix.pointerUp(screenOf(110, 0));

    const ok = await store.generate(3);
    expect(ok).toBe(true);

    // the marker the UI renders is the trajectory's final point
    const rolloutEgo = store.rollout!.agents.find((a) => a.id === "ego")!;
    const marker = rolloutEgo.trajectory[rolloutEgo.trajectory.length - 1];
    const summaryEgo = store.lastGenerate!.summary.agents.find((a) => a.agent_id === "ego")!;
    expect(summaryEgo.target).not.toBeNull();
    const [tx, ty] = summaryEgo.target!;
    const markerError = Math.hypot(marker[0] - tx, marker[1] - ty);
    // within the server-reported tolerance (up to float roundtrip slack)
    expect(markerError).toBeLessThanOrEqual(summaryEgo.endpoint_error! + 1e-9);
    expect(summaryEgo.endpoint_error!).toBeLessThan(5); // toy tolerance from the fake model
  });

  it("undo after drag restores the exact server state; redo reapplies it", async () => {
    const original = server.summary();
    ix.mode = "move";
    ix.pointerDown(screenOf(0, 0));
    ix.pointerMove(screenOf(-8, 2));
    await ix.pointerUp(screenOf(-8, 2));
    const edited = server.summary();
    expect(edited.agents.find((a) => a.id === "ego")!.x).toBeCloseTo(-8, 6);

    await store.undo();
    expect(store.summary!.agents).toEqual(original.agents);
    expect(store.summary!.conditions).toEqual(original.conditions);

    await store.redo();
    expect(store.summary!.agents).toEqual(edited.agents);
    expect(store.summary!.conditions).toEqual(edited.conditions);
    // and the client mirror always equals the server summary exactly
    expect(store.summary).toEqual(server.summary());
  });

  it("playback cursor stays within the rollout length", async () => {
    await store.generate(1);
    const playback = new Playback();
    const len = Math.max(...store.rollout!.agents.map((a) => a.trajectory.length));
    playback.setLength(len);
    playback.seek(10_000);
    expect(playback.cursor).toBe(len - 1);
    playback.playing = true;
    for (let i = 0; i < len + 5; i++) playback.tick();
    expect(playback.cursor).toBeLessThanOrEqual(len - 1);
    expect(playback.cursor).toBeGreaterThanOrEqual(0);
    playback.setLength(10); // shorter rollout replaces it
    expect(playback.cursor).toBeLessThanOrEqual(9);
  });
});
