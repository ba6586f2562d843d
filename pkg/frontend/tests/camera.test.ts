import { describe, expect, it } from "vitest";

import { Camera } from "../src/camera";

describe("camera transforms", () => {
  it("round-trips world -> screen -> world", () => {
    const cam = new Camera();
    cam.centerX = 12.5;
    cam.centerY = -3;
    cam.pxPerMeter = 9;
    for (const p of [{ x: 0, y: 0 }, { x: -40.2, y: 17 }, { x: 123, y: -55 }]) {
      const back = cam.screenToWorld(cam.worldToScreen(p));
      expect(back.x).toBeCloseTo(p.x, 9);
      expect(back.y).toBeCloseTo(p.y, 9);
    }
  });

  it("keeps y up in world and down on screen", () => {
    const cam = new Camera();
    const low = cam.worldToScreen({ x: 0, y: 0 });
    const high = cam.worldToScreen({ x: 0, y: 10 });
    expect(high.y).toBeLessThan(low.y);
  });

  it("zoomAt keeps the anchor point fixed", () => {
    const cam = new Camera();
    cam.centerX = 5;
    const anchorScreen = { x: 200, y: 150 };
    const before = cam.screenToWorld(anchorScreen);
    cam.zoomAt(anchorScreen, 1.5);
    const after = cam.screenToWorld(anchorScreen);
    expect(after.x).toBeCloseTo(before.x, 9);
    expect(after.y).toBeCloseTo(before.y, 9);
    expect(cam.pxPerMeter).toBeCloseTo(9, 9);
  });

  it("pan moves the view opposite the drag", () => {
    const cam = new Camera();
    const before = cam.screenToWorld({ x: 400, y: 300 });
    cam.panByScreen(60, 0); // drag right: world under cursor moves right too
    const after = cam.screenToWorld({ x: 400, y: 300 });
    expect(after.x).toBeLessThan(before.x);
  });

  it("fitBounds contains the box with margin", () => {
    const cam = new Camera();
    cam.viewportW = 800;
    cam.viewportH = 600;
    cam.fitBounds(-60, -60, 60, 60);
    const tl = cam.worldToScreen({ x: -60, y: 60 });
    const br = cam.worldToScreen({ x: 60, y: -60 });
    expect(tl.x).toBeGreaterThanOrEqual(0);
    expect(tl.y).toBeGreaterThanOrEqual(0);
    expect(br.x).toBeLessThanOrEqual(800);
    expect(br.y).toBeLessThanOrEqual(600);
  });
});
