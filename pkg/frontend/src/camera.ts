/** World <-> screen transform. World is meters, y up; screen is pixels, y down. */

export interface Point {
  x: number;
  y: number;
}

export class Camera {
  centerX = 0; // world coords at the viewport center
  centerY = 0;
  pxPerMeter = 6;
  viewportW = 800;
  viewportH = 600;

  worldToScreen(p: Point): Point {
    return {
      x: (p.x - this.centerX) * this.pxPerMeter + this.viewportW / 2,
      y: (this.centerY - p.y) * this.pxPerMeter + this.viewportH / 2,
    };
  }

  screenToWorld(p: Point): Point {
    return {
      x: (p.x - this.viewportW / 2) / this.pxPerMeter + this.centerX,
      y: this.centerY - (p.y - this.viewportH / 2) / this.pxPerMeter,
    };
  }

  panByScreen(dxPx: number, dyPx: number): void {
    this.centerX -= dxPx / this.pxPerMeter;
    this.centerY += dyPx / this.pxPerMeter;
  }

  /** Zoom about a fixed screen point so the world point under it stays put. */
  zoomAt(screen: Point, factor: number): void {
    const anchor = this.screenToWorld(screen);
    this.pxPerMeter = Math.min(Math.max(this.pxPerMeter * factor, 0.5), 120);
    const moved = this.screenToWorld(screen);
    this.centerX += anchor.x - moved.x;
    this.centerY += anchor.y - moved.y;
  }

  fitBounds(minX: number, minY: number, maxX: number, maxY: number, marginPx = 40): void {
    const w = Math.max(maxX - minX, 1);
    const h = Math.max(maxY - minY, 1);
    this.centerX = (minX + maxX) / 2;
    this.centerY = (minY + maxY) / 2;
    this.pxPerMeter = Math.min(
      (this.viewportW - 2 * marginPx) / w,
      (this.viewportH - 2 * marginPx) / h,
    );
  }
}
