// Typed client for the labeling HTTP API. The UI talks to the backend
// through this interface only; tests substitute an in-memory fake.

export interface VideoInfo {
  name: string;
  n_frames: number;
  height: number;
  width: number;
}

export interface ServerPoint {
  point_id: number;
  x: number;
  y: number;
}

export interface LabelsPayload {
  points: ServerPoint[];
  version: string;
}

export type SaveResult =
  | { status: "ok"; labels: LabelsPayload }
  | { status: "conflict"; labels: LabelsPayload }
  | { status: "error"; message: string };

export interface ApiClient {
  listVideos(): Promise<VideoInfo[]>;
  frameUrl(video: string, frame: number): string;
  getContour(video: string, frame: number): Promise<[number, number][] | null>;
  getLabels(video: string, frame: number): Promise<LabelsPayload>;
  putLabels(
    video: string,
    frame: number,
    points: ServerPoint[],
    version: string,
  ): Promise<SaveResult>;
}

export class HttpApiClient implements ApiClient {
  constructor(private base: string = "") {}

  async listVideos(): Promise<VideoInfo[]> {
    const res = await fetch(`${this.base}/api/videos`);
    if (!res.ok) throw new Error(`video listing failed: ${res.status}`);
    const body = await res.json();
    return body.videos as VideoInfo[];
  }

  frameUrl(video: string, frame: number): string {
    return `${this.base}/api/videos/${encodeURIComponent(video)}/frames/${frame}`;
  }

  async getContour(video: string, frame: number): Promise<[number, number][] | null> {
    const res = await fetch(
      `${this.base}/api/videos/${encodeURIComponent(video)}/contours/${frame}`,
    );
    if (res.status === 404) return null;
    if (!res.ok) throw new Error(`contour fetch failed: ${res.status}`);
    const body = await res.json();
    return body.points as [number, number][];
  }

  async getLabels(video: string, frame: number): Promise<LabelsPayload> {
    const res = await fetch(
      `${this.base}/api/videos/${encodeURIComponent(video)}/labels/${frame}`,
    );
    if (!res.ok) throw new Error(`label fetch failed: ${res.status}`);
    const body = await res.json();
    return { points: body.points as ServerPoint[], version: body.version as string };
  }

  async putLabels(
    video: string,
    frame: number,
    points: ServerPoint[],
    version: string,
  ): Promise<SaveResult> {
    const res = await fetch(
      `${this.base}/api/videos/${encodeURIComponent(video)}/labels/${frame}`,
      {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ points, version }),
      },
    );
    const body = await res.json();
    if (res.status === 409) {
      return {
        status: "conflict",
        labels: { points: body.points as ServerPoint[], version: body.version as string },
      };
    }
    if (!res.ok) {
      return { status: "error", message: String(body.message ?? res.status) };
    }
    return {
      status: "ok",
      labels: { points: body.points as ServerPoint[], version: body.version as string },
    };
  }
}
