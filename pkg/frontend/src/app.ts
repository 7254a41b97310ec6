// Browser shell: canvas rendering and event wiring around the Session
// state machine. Everything with logic worth testing lives in session.ts
// and transform.ts; this file only translates DOM events into session
// calls and draws the result.

import { HttpApiClient } from "./api.ts";
import { contourColor, labelColor } from "./colors.ts";
import { POINT_CONVENTION, Session, openFirstVideo } from "./session.ts";
import { type Point, wheelFactor } from "./transform.ts";

const DRAG_RADIUS_PX = 8;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private canvas = el<HTMLCanvasElement>("view");
  private ctx = this.canvas.getContext("2d")!;
  private frameImage = new Image();
  private session!: Session;
  private api = new HttpApiClient();
  private dragId: number | null = null;

  async start(): Promise<void> {
    const videos = await this.api.listVideos();
    const select = el<HTMLSelectElement>("video-select");
    for (const v of videos) {
      const option = document.createElement("option");
      option.value = v.name;
      option.textContent = `${v.name} (${v.n_frames} frames)`;
      select.appendChild(option);
    }
    select.addEventListener("change", () => void this.openVideo(select.value));

    this.session = await openFirstVideo(this.api);
    this.canvas.width = this.session.video.width;
    this.canvas.height = this.session.video.height;
    this.wireEvents();
    await this.refreshFrame();
  }

  private async openVideo(name: string): Promise<void> {
    const videos = await this.api.listVideos();
    const video = videos.find((v) => v.name === name);
    if (!video) return;
    this.session = new Session(this.api, video);
    await this.session.load(0);
    this.canvas.width = video.width;
    this.canvas.height = video.height;
    await this.refreshFrame();
  }

  private cursor(event: MouseEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) * this.canvas.width) / rect.width,
      y: ((event.clientY - rect.top) * this.canvas.height) / rect.height,
    };
  }

  private wireEvents(): void {
    this.canvas.addEventListener("wheel", (event) => {
      event.preventDefault();
      this.session.zoomBy(this.cursor(event), wheelFactor(event.deltaY));
      this.draw();
    });

    this.canvas.addEventListener("mousedown", (event) => {
      const cursor = this.cursor(event);
      const hit = this.session.hitTest(cursor, DRAG_RADIUS_PX);
      this.dragId = hit ? hit.pointId : null;
    });
    this.canvas.addEventListener("mousemove", (event) => {
      if (this.dragId === null) return;
      this.session.dragPoint(this.dragId, this.cursor(event));
      this.updateStatus();
      this.draw();
    });
    window.addEventListener("mouseup", (event) => {
      if (this.dragId !== null) {
        // Releasing a drag (or a click on an existing point) never creates.
        this.dragId = null;
        return;
      }
      if (event.target !== this.canvas) return;
      this.session.createPoint(this.cursor(event));
      this.updateStatus();
      this.draw();
    });

    el<HTMLButtonElement>("prev").addEventListener("click", () => void this.step(-1));
    el<HTMLButtonElement>("next").addEventListener("click", () => void this.step(1));
    el<HTMLButtonElement>("save").addEventListener("click", () => void this.save());
    el<HTMLButtonElement>("clear").addEventListener("click", () => {
      this.session.clearPoints();
      this.updateStatus();
      this.draw();
    });
    el<HTMLButtonElement>("conflict-take-server").addEventListener("click", () => {
      this.session.takeServerVersion();
      this.updateStatus();
      this.draw();
    });
    el<HTMLButtonElement>("conflict-keep-mine").addEventListener("click", async () => {
      await this.session.retryWithServerToken();
      this.updateStatus();
      this.draw();
    });
  }

  private async step(direction: 1 | -1): Promise<void> {
    const moved = await this.session.stepFrame(direction, () =>
      window.confirm("Discard unsaved points on this frame?"),
    );
    if (moved) await this.refreshFrame();
  }

  private async save(): Promise<void> {
    await this.session.save();
    this.updateStatus();
    this.draw();
  }

  private refreshFrame(): Promise<void> {
    return new Promise((resolve) => {
      this.frameImage = new Image();
      this.frameImage.onload = () => {
        this.updateStatus();
        this.draw();
        resolve();
      };
      this.frameImage.src = this.session.frameUrl();
    });
  }

  private updateStatus(): void {
    el("frame-label").textContent =
      `frame ${this.session.frame + 1} / ${this.session.video.n_frames}`;
    el("dirty-badge").hidden = !this.session.dirty;
    const over = el("over-badge");
    over.hidden = !this.session.overConvention();
    over.textContent = `more than ${POINT_CONVENTION} points; the backend stores ids 0-${POINT_CONVENTION - 1} only`;
    el("conflict-banner").hidden = this.session.conflict === null;
    const error = el("error-banner");
    error.hidden = this.session.lastError === null;
    error.textContent = this.session.lastError ?? "";
  }

  private draw(): void {
    const { ctx, canvas } = this;
    const view = this.session.view;
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.fillStyle = "#101014";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.setTransform(
      view.zoom,
      0,
      0,
      view.zoom,
      -view.originX * view.zoom,
      -view.originY * view.zoom,
    );
    ctx.imageSmoothingEnabled = view.zoom < 4;
    if (this.frameImage.complete && this.frameImage.naturalWidth > 0) {
      ctx.drawImage(this.frameImage, 0, 0);
    }

    const contour = this.session.contour;
    const dot = Math.max(0.75, 1.5 / view.zoom);
    contour.forEach(([x, y], i) => {
      ctx.fillStyle = contourColor(i, contour.length);
      ctx.fillRect(x - dot / 2, y - dot / 2, dot, dot);
    });

    const r = 5 / view.zoom;
    for (const p of this.session.points) {
      ctx.strokeStyle = labelColor(p.pointId);
      ctx.lineWidth = 1.5 / view.zoom;
      ctx.beginPath();
      ctx.arc(p.x, p.y, r, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.beginPath();
      ctx.moveTo(p.x - r * 1.6, p.y);
      ctx.lineTo(p.x + r * 1.6, p.y);
      ctx.moveTo(p.x, p.y - r * 1.6);
      ctx.lineTo(p.x, p.y + r * 1.6);
      ctx.stroke();
      ctx.fillStyle = labelColor(p.pointId);
      ctx.font = `${10 / view.zoom}px sans-serif`;
      ctx.fillText(String(p.pointId), p.x + r * 1.2, p.y - r * 1.2);
    }
  }
}

new App().start().catch((err) => {
  const banner = document.getElementById("error-banner");
  if (banner) {
    banner.hidden = false;
    banner.textContent = String(err);
  }
});
