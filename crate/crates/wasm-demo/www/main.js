import init, { preset_names, preset, price, surface_slice, hedge_path } from "./pkg/impact_hedge_wasm.js";

const SURFACE_STRIDE = 5;
const PATH_STRIDE = 5;
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(id, text, isError = false) {
  const el = $(id);
  el.textContent = text;
  el.className = isError ? "err" : "";
}

function column(rows, stride, k) {
  const out = [];
  for (let i = k; i < rows.length; i += stride) out.push(rows[i]);
  return out;
}

function plot(canvas, xs, series) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.values).filter(Number.isFinite);
  if (!ys.length) return;
  let [lo, hi] = [Math.min(...ys), Math.max(...ys)];
  if (hi - lo < 1e-12) { lo -= 1; hi += 1; }
  const [x0, x1] = [xs[0], xs[xs.length - 1]];
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - lo) / (hi - lo)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#333";
  ctx.font = "11px sans-serif";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillText(hi.toPrecision(4), 2, pad + 4);
  ctx.fillText(lo.toPrecision(4), 2, h - pad);
  ctx.fillText(x0.toPrecision(3), pad, h - pad + 14);
  ctx.fillText(x1.toPrecision(3), w - pad - 20, h - pad + 14);

  series.forEach((s, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    let pen = false;
    s.values.forEach((y, j) => {
      if (!Number.isFinite(y)) { pen = false; return; }
      pen ? ctx.lineTo(px(xs[j]), py(y)) : ctx.moveTo(px(xs[j]), py(y));
      pen = true;
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.label, pad + 8 + i * 90, pad - 8);
  });
}

function runPrice() {
  try {
    const r = price($("scenario").value);
    const lines = [
      `price         ${r.price}`,
      `closed form   ${Number.isNaN(r.closed_form) ? "n/a" : r.closed_form}`,
      `psi residual  ${r.psi_residual.toExponential(3)}`,
      `unique root   ${r.unique}`,
      `J = ${r.dimension}, T = ${r.horizon}`,
    ];
    show("price-out", lines.join("\n"));
    $("slice-t").max = r.horizon;
    r.free();
  } catch (e) {
    show("price-out", String(e.message ?? e), true);
  }
}

function runSlice() {
  try {
    const rows = surface_slice($("scenario").value, num("slice-t"), num("slice-lo"), num("slice-hi"), num("slice-n"));
    const b = column(rows, SURFACE_STRIDE, 0);
    plot($("slice-plot"), b, [
      { label: "S̃₁", values: column(rows, SURFACE_STRIDE, 1) },
      { label: "ĝ", values: column(rows, SURFACE_STRIDE, 2) },
      { label: "σ̃₁₁", values: column(rows, SURFACE_STRIDE, 3) },
      { label: "H₁", values: column(rows, SURFACE_STRIDE, 4) },
    ]);
    const h = column(rows, SURFACE_STRIDE, 4).filter(Number.isFinite);
    show("slice-out", h.length
      ? `H₁ ranges over [${Math.min(...h).toFixed(4)}, ${Math.max(...h).toFixed(4)}]`
      : "no hedge ratio: volatility matrix is singular on this slice");
  } catch (e) {
    show("slice-out", String(e.message ?? e), true);
  }
}

function runPath() {
  try {
    const r = hedge_path($("scenario").value, num("path-steps"), BigInt(num("path-seed")));
    const rows = r.rows;
    plot($("path-plot"), column(rows, PATH_STRIDE, 0), [
      { label: "wealth", values: column(rows, PATH_STRIDE, 4) },
      { label: "S̃₁", values: column(rows, PATH_STRIDE, 2) },
      { label: "H₁", values: column(rows, PATH_STRIDE, 3) },
    ]);
    show("path-out", [
      `price           ${r.price}`,
      `claim at T      ${r.claim}`,
      `terminal error  ${r.terminal_error.toExponential(3)}`,
    ].join("\n"));
    r.free();
  } catch (e) {
    show("path-out", String(e.message ?? e), true);
  }
}

await init();
for (const name of preset_names()) $("preset").add(new Option(name, name));
const load = () => { $("scenario").value = preset($("preset").value); runPrice(); };
$("preset").addEventListener("change", load);
$("run-price").addEventListener("click", runPrice);
$("run-slice").addEventListener("click", runSlice);
$("run-path").addEventListener("click", runPath);
load();
