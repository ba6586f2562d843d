/** Playback cursor over rollout frames. The cursor is always clamped to the
 * rollout length, including after a shorter rollout replaces a longer one. */

export class Playback {
  cursor = 0;
  playing = false;
  private length = 0;

  setLength(frames: number): void {
    this.length = Math.max(frames, 0);
    this.cursor = Math.min(this.cursor, Math.max(this.length - 1, 0));
  }

  get maxCursor(): number {
    return Math.max(this.length - 1, 0);
  }

  seek(frame: number): void {
    this.cursor = Math.min(Math.max(Math.round(frame), 0), this.maxCursor);
  }

  seekFraction(f: number): void {
    this.seek(f * this.maxCursor);
  }

  tick(): void {
    if (!this.playing || this.length === 0) return;
    this.cursor += 1;
    if (this.cursor > this.maxCursor) this.cursor = 0; // loop
  }

  toggle(): void {
    this.playing = !this.playing;
  }
}
