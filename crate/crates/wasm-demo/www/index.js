import init, { simplexHeatmap, simplexSamples, binaryView } from "./pkg/concrete_wasm.js";

const COLORS = [[214, 69, 65], [52, 120, 198], [64, 160, 90]];
let seed = 1n;

function readControls(fieldset) {
  const values = {};
  for (const input of fieldset.querySelectorAll("input")) {
    const v = Number(input.value);
    const shown = ["count", "logAlpha"].includes(input.name) ? v : Math.exp(v);
    input.nextElementSibling.textContent = input.name === "count" ? v : shown.toFixed(2);
    values[input.name] = shown;
  }
  return values;
}

function drawSimplex() {
  const canvas = document.getElementById("triangle");
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const p = readControls(document.getElementById("simplex"));
  const alphas = new Float64Array([p.a0, p.a1, p.a2]);

  const grid = simplexHeatmap(alphas, p.lambda, width, height);
  let top = -Infinity;
  for (const v of grid) if (Number.isFinite(v) && v > top) top = v;
  const image = ctx.createImageData(width, height);
  for (let i = 0; i < grid.length; i++) {
    const v = grid[i];
    const t = Number.isFinite(v) ? Math.max(0, 1 - (top - v) / 8) : -1;
    const shade = t < 0 ? 255 : Math.round(255 - 200 * t);
    image.data.set([shade, shade, t < 0 ? 255 : Math.round(255 - 120 * t), 255], 4 * i);
  }
  ctx.putImageData(image, 0, 0);

  const pts = simplexSamples(alphas, p.lambda, p.count, seed, width, height);
  const counts = [0, 0, 0];
  for (let i = 0; i < pts.length; i += 3) {
    const [r, g, b] = COLORS[pts[i + 2]];
    counts[pts[i + 2]] += 1;
    ctx.fillStyle = `rgba(${r},${g},${b},0.7)`;
    ctx.fillRect(pts[i] - 1.5, pts[i + 1] - 1.5, 3, 3);
  }
  const total = p.a0 + p.a1 + p.a2;
  const n = Math.max(1, p.count);
  document.getElementById("freqs").innerHTML = [p.a0, p.a1, p.a2]
    .map((a, k) => `state ${k + 1}: rounded ${(counts[k] / n).toFixed(3)}, α/Σα ${(a / total).toFixed(3)}`)
    .join("<br>");
}

function drawCurve() {
  const canvas = document.getElementById("curve");
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  const p = readControls(document.getElementById("binary"));
  const bins = 60;
  const v = binaryView(p.logAlpha, p.lambda, bins, 20000, seed);
  const density = v.slice(0, bins);
  const hist = v.slice(bins);
  const peak = Math.min(12, Math.max(...density, ...hist)) || 1;
  const y = (d) => height - 20 - (height - 30) * Math.min(d, peak) / peak;
  const x = (i) => 10 + (width - 20) * (i + 0.5) / bins;

  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "rgba(52,120,198,0.35)";
  const w = (width - 20) / bins;
  hist.forEach((h, i) => ctx.fillRect(x(i) - w / 2, y(h), w - 1, height - 20 - y(h)));
  ctx.strokeStyle = "#d6453f";
  ctx.lineWidth = 2;
  ctx.beginPath();
  density.forEach((d, i) => (i ? ctx.lineTo(x(i), y(d)) : ctx.moveTo(x(i), y(d))));
  ctx.stroke();
  ctx.fillStyle = "#222";
  ctx.fillText("0", 8, height - 5);
  ctx.fillText("1", width - 14, height - 5);
}

await init();
for (const input of document.querySelectorAll("#simplex input")) input.addEventListener("input", drawSimplex);
for (const input of document.querySelectorAll("#binary input")) input.addEventListener("input", drawCurve);
document.getElementById("resample").addEventListener("click", () => {
  seed += 1n;
  drawSimplex();
  drawCurve();
});
drawSimplex();
drawCurve();
