/** SSE push-channel subscription with an injectable source factory. */

import type { PushEvent } from "./types";

export interface EventSourceLike {
  onmessage: ((e: { data: string }) => void) | null;
  onerror: ((e: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export class PushChannel {
  private source: EventSourceLike | null = null;
  private lastId = -1;
  handlers: ((e: PushEvent) => void)[] = [];

  constructor(private factory: EventSourceFactory = (url) => new EventSource(url) as EventSourceLike) {}

  subscribe(sessionId: string): void {
    this.close();
    this.source = this.factory(`/sessions/${sessionId}/events?after=${this.lastId}`);
    this.source.onmessage = (e) => {
      let event: PushEvent;
      try {
        event = JSON.parse(e.data);
      } catch {
        return;
      }
      if (event.id <= this.lastId) return; // replayed backlog
      this.lastId = event.id;
      for (const fn of this.handlers) fn(event);
    };
    this.source.onerror = () => {
      // stream closed server-side after idling; a fresh subscribe resumes
      this.close();
    };
  }

  on(fn: (e: PushEvent) => void): void {
    this.handlers.push(fn);
  }

  close(): void {
    this.source?.close();
    this.source = null;
  }
}
