// View transform between screen (canvas) and image pixel coordinates.
// The transform is a uniform scale plus translation, stored as the zoom
// factor and the image point sitting at the screen origin. Keeping it in
// this form makes zoom-at-cursor exact: the cursor's image point is
// recomputed as the new origin offset, so it cannot drift.

export const MIN_ZOOM = 1;
export const MAX_ZOOM = 16;

export interface Point {
  x: number;
  y: number;
}

export interface Viewport {
  zoom: number;
  // image coordinate shown at the screen's top-left corner
  originX: number;
  originY: number;
}

export function resetView(): Viewport {
  return { zoom: 1, originX: 0, originY: 0 };
}

export function imageToScreen(view: Viewport, p: Point): Point {
  return {
    x: (p.x - view.originX) * view.zoom,
    y: (p.y - view.originY) * view.zoom,
  };
}

export function screenToImage(view: Viewport, s: Point): Point {
  return {
    x: view.originX + s.x / view.zoom,
    y: view.originY + s.y / view.zoom,
  };
}

function clampZoom(zoom: number): number {
  return Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, zoom));
}

// Scale the view by `factor` while keeping the image point under the
// screen-space `cursor` fixed. Zoom is clamped to [MIN_ZOOM, MAX_ZOOM];
// the origin is recomputed from the clamped zoom, so the cursor point
// stays fixed even when the clamp bites.
export function zoomAt(view: Viewport, cursor: Point, factor: number): Viewport {
  const pivot = screenToImage(view, cursor);
  const zoom = clampZoom(view.zoom * factor);
  return {
    zoom,
    originX: pivot.x - cursor.x / zoom,
    originY: pivot.y - cursor.y / zoom,
  };
}

// One wheel notch is a fixed zoom step; deltaY > 0 (scroll down) zooms out.
export function wheelFactor(deltaY: number): number {
  return Math.pow(1.25, -Math.sign(deltaY));
}
