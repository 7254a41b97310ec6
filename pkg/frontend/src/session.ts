// Labeling session state: one video, one frame in view, in-progress points
// in image pixel coordinates, and the optimistic-concurrency token for the
// frame's labels. All mutations funnel through here so the whole flow is
// testable without a DOM.

import type { ApiClient, LabelsPayload, ServerPoint, VideoInfo } from "./api.ts";
import {
  type Point,
  type Viewport,
  resetView,
  screenToImage,
  zoomAt,
} from "./transform.ts";

// Labeling convention: five tracked points per video. More are allowed
// locally (the UI shows a warning badge), but the server rejects ids >= 5.
export const POINT_CONVENTION = 5;

export interface LabelPoint {
  pointId: number;
  // image pixel coordinates
  x: number;
  y: number;
}

export interface Conflict {
  server: LabelsPayload;
}

function toServer(points: LabelPoint[], width: number, height: number): ServerPoint[] {
  return points.map((p) => ({ point_id: p.pointId, x: p.x / width, y: p.y / height }));
}

function fromServer(points: ServerPoint[], width: number, height: number): LabelPoint[] {
  return points.map((p) => ({ pointId: p.point_id, x: p.x * width, y: p.y * height }));
}

export class Session {
  readonly video: VideoInfo;
  frame = 0;
  view: Viewport = resetView();
  points: LabelPoint[] = [];
  contour: [number, number][] = [];
  dirty = false;
  version = "";
  conflict: Conflict | null = null;
  lastError: string | null = null;

  constructor(
    private api: ApiClient,
    video: VideoInfo,
  ) {
    this.video = video;
  }

  async load(frame: number): Promise<void> {
    const labels = await this.api.getLabels(this.video.name, frame);
    const contour = await this.api.getContour(this.video.name, frame);
    this.frame = frame;
    this.points = fromServer(labels.points, this.video.width, this.video.height);
    this.version = labels.version;
    this.contour = contour ?? [];
    this.dirty = false;
    this.conflict = null;
    this.lastError = null;
  }

  frameUrl(): string {
    return this.api.frameUrl(this.video.name, this.frame);
  }

  zoomBy(cursor: Point, factor: number): void {
    this.view = zoomAt(this.view, cursor, factor);
  }

  private inBounds(p: Point): boolean {
    return p.x >= 0 && p.x < this.video.width && p.y >= 0 && p.y < this.video.height;
  }

  private nextPointId(): number {
    const used = new Set(this.points.map((p) => p.pointId));
    let id = 0;
    while (used.has(id)) id += 1;
    return id;
  }

  // Click in screen coordinates; returns the new point, or null when the
  // click lands outside the image (ignored by contract).
  createPoint(screen: Point): LabelPoint | null {
    const p = screenToImage(this.view, screen);
    if (!this.inBounds(p)) return null;
    const point = { pointId: this.nextPointId(), x: p.x, y: p.y };
    this.points.push(point);
    this.dirty = true;
    return point;
  }

  overConvention(): boolean {
    return this.points.length > POINT_CONVENTION;
  }

  // Drag target position in screen coordinates; the point is kept inside
  // the image so the session invariant (points within bounds) holds.
  dragPoint(pointId: number, screen: Point): void {
    const point = this.points.find((p) => p.pointId === pointId);
    if (!point) return;
    const p = screenToImage(this.view, screen);
    point.x = Math.min(this.video.width - 1, Math.max(0, p.x));
    point.y = Math.min(this.video.height - 1, Math.max(0, p.y));
    this.dirty = true;
  }

  // Nearest point within `radius` screen pixels of the cursor, for drag
  // hit-testing.
  hitTest(screen: Point, radius: number): LabelPoint | null {
    const img = screenToImage(this.view, screen);
    let best: LabelPoint | null = null;
    let bestD = (radius / this.view.zoom) ** 2;
    for (const p of this.points) {
      const d = (p.x - img.x) ** 2 + (p.y - img.y) ** 2;
      if (d <= bestD) {
        best = p;
        bestD = d;
      }
    }
    return best;
  }

  clearPoints(): void {
    if (this.points.length === 0) return;
    this.points = [];
    this.dirty = true;
  }

  async save(): Promise<"ok" | "conflict" | "error"> {
    const sent = toServer(this.points, this.video.width, this.video.height);
    const result = await this.api.putLabels(this.video.name, this.frame, sent, this.version);
    if (result.status === "ok") {
      this.points = fromServer(result.labels.points, this.video.width, this.video.height);
      this.version = result.labels.version;
      this.dirty = false;
      this.conflict = null;
      this.lastError = null;
      return "ok";
    }
    if (result.status === "conflict") {
      // keep the local edit untouched; the user chooses how to resolve
      this.conflict = { server: result.labels };
      return "conflict";
    }
    this.lastError = result.message;
    return "error";
  }

  // Conflict resolution: drop local edits and adopt the server state.
  takeServerVersion(): void {
    if (!this.conflict) return;
    const server = this.conflict.server;
    this.points = fromServer(server.points, this.video.width, this.video.height);
    this.version = server.version;
    this.dirty = false;
    this.conflict = null;
  }

  // Conflict resolution: keep the local points and retry on top of the
  // server's current token.
  async retryWithServerToken(): Promise<"ok" | "conflict" | "error"> {
    if (!this.conflict) return "error";
    this.version = this.conflict.server.version;
    this.conflict = null;
    return this.save();
  }

  // Frame stepping with the unsaved-edit guard. `confirmLeave` is asked
  // only when there are unsaved edits; returning false cancels the step.
  async stepFrame(
    direction: 1 | -1,
    confirmLeave: () => boolean | Promise<boolean>,
  ): Promise<boolean> {
    const target = Math.min(this.video.n_frames - 1, Math.max(0, this.frame + direction));
    if (target === this.frame) return false;
    if (this.dirty && !(await confirmLeave())) return false;
    await this.load(target);
    return true;
  }
}

export async function openFirstVideo(api: ApiClient): Promise<Session> {
  const videos = await api.listVideos();
  const first = videos[0];
  if (!first) throw new Error("no videos served");
  const session = new Session(api, first);
  await session.load(0);
  return session;
}
