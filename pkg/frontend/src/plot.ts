// BOLD line plot on a canvas. Downsampling here is display-only; the stored
// series is never modified.

export function downsampleForDisplay(values: number[], maxPoints: number): number[] {
  if (values.length <= maxPoints) return values;
  const stride = Math.ceil(values.length / maxPoints);
  const out: number[] = [];
  for (let i = 0; i < values.length; i += stride) out.push(values[i]);
  return out;
}

export function drawBold(canvas: HTMLCanvasElement, bold: number[]): void {
  const ctx = canvas.getContext('2d');
  if (!ctx || bold.length === 0) return;
  const pts = downsampleForDisplay(bold, canvas.width);
  const lo = Math.min(...pts);
  const hi = Math.max(...pts);
  const span = hi - lo || 1;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = '#2563eb';
  ctx.lineWidth = 1;
  ctx.beginPath();
  pts.forEach((v, i) => {
    const x = (i / (pts.length - 1 || 1)) * (canvas.width - 2) + 1;
    const y = canvas.height - 4 - ((v - lo) / span) * (canvas.height - 8);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}
