// Rainbow ordering for contour overlays: index 0 is red and the hue walks
// the wheel once around the contour, so labelers can read point order at a
// glance.

export function contourColor(index: number, count: number): string {
  const hue = count > 0 ? (300 * index) / count : 0;
  return `hsl(${hue.toFixed(1)}, 90%, 55%)`;
}

export const LABEL_COLORS = ["#ff3b30", "#ffcc00", "#34c759", "#5ac8fa", "#af52de"];

export function labelColor(pointId: number): string {
  return LABEL_COLORS[pointId % LABEL_COLORS.length] ?? "#ffffff";
}
