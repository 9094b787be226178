import init, { entropy_curves, rics, sample_subsets } from "./pkg/ric_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// Minimal line/step plot on a 2d canvas. series: [{x, y, color, style}]
function plot(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = { l: 56, r: 16, t: 14, b: 36 };
  ctx.clearRect(0, 0, W, H);
  const xs = series.flatMap((s) => s.x).concat(opts.vlines || []);
  const ys = series.flatMap((s) => s.y).filter(Number.isFinite).concat(opts.ymin ?? []);
  if (!xs.length || !ys.length) return;
  let [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (x1 === x0) x1 = x0 + 1;
  if (y1 === y0) y1 = y0 + 1;
  const yr = y1 - y0; y1 += 0.05 * yr;
  const sx = (x) => pad.l + ((x - x0) / (x1 - x0)) * (W - pad.l - pad.r);
  const sy = (y) => H - pad.b - ((y - y0) / (y1 - y0)) * (H - pad.t - pad.b);

  ctx.font = "12px system-ui"; ctx.fillStyle = "#444"; ctx.strokeStyle = "#ddd"; ctx.lineWidth = 1;
  for (let i = 0; i <= 5; i++) {
    const x = x0 + (i / 5) * (x1 - x0), y = y0 + (i / 5) * (y1 - y0);
    ctx.beginPath(); ctx.moveTo(sx(x), pad.t); ctx.lineTo(sx(x), H - pad.b); ctx.stroke();
    ctx.beginPath(); ctx.moveTo(pad.l, sy(y)); ctx.lineTo(W - pad.r, sy(y)); ctx.stroke();
    ctx.fillText(x.toPrecision(3), sx(x) - 12, H - pad.b + 16);
    ctx.fillText(y.toPrecision(3), 4, sy(y) + 4);
  }
  if (y0 < 0 && y1 > 0) {
    ctx.strokeStyle = "#000"; ctx.beginPath(); ctx.moveTo(pad.l, sy(0)); ctx.lineTo(W - pad.r, sy(0)); ctx.stroke();
  }
  ctx.setLineDash([4, 4]); ctx.strokeStyle = "#888";
  for (const v of opts.vlines || []) {
    ctx.beginPath(); ctx.moveTo(sx(v), pad.t); ctx.lineTo(sx(v), H - pad.b); ctx.stroke();
  }
  ctx.setLineDash([]);
  ctx.fillText(opts.xlabel || "", W - pad.r - 60, H - 4);

  let ly = pad.t + 14;
  for (const s of series) {
    ctx.strokeStyle = ctx.fillStyle = s.color; ctx.lineWidth = 2;
    if (s.style === "bars") {
      const w = s.x.length > 1 ? sx(s.x[1]) - sx(s.x[0]) : 4;
      s.x.forEach((x, i) => ctx.fillRect(sx(x) - w / 2, sy(s.y[i]), w - 1, sy(y0) - sy(s.y[i])));
    } else {
      ctx.beginPath();
      s.x.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.y[i])) : ctx.moveTo(sx(x), sy(s.y[i]))));
      ctx.stroke();
    }
    if (s.label) { ctx.fillRect(W - pad.r - 150, ly - 8, 12, 8); ctx.fillStyle = "#222"; ctx.fillText(s.label, W - pad.r - 132, ly); ly += 16; }
  }
}

function guarded(outId, fn) {
  return () => {
    const out = $(outId);
    out.classList.remove("err");
    out.textContent = "computing...";
    // let the browser paint before the synchronous wasm call
    setTimeout(() => {
      try { fn(out); } catch (e) { out.classList.add("err"); out.textContent = String(e.message || e); }
    }, 10);
  };
}

function runCurves(out) {
  const t = performance.now();
  const c = entropy_curves(num("c-alpha"), num("c-rho"), num("c-mu"), num("c-steps"));
  const lo = c.edge_lo(), hi = c.edge_hi(), h = c.plateau();
  // each branch joins the zero-bias plateau between the bulk edges
  const minL = [...c.min_lambda()].reverse(), minS = [...c.min_sigma()].reverse();
  const maxL = c.max_lambda(), maxS = c.max_sigma();
  plot($("c-plot"), [
    { x: minL.concat(maxL.length ? [maxL[0]] : []), y: minS.concat(maxL.length ? [h] : []), color: "#1f77b4", label: "mu > 0 (lambda_min)" },
    { x: maxL, y: maxS, color: "#d62728", label: "mu < 0 (lambda_max)" },
  ], { vlines: [lo, hi], xlabel: "lambda" });
  out.textContent =
    `H(rho) = ${h.toFixed(5)}   bulk edges = [${lo.toFixed(4)}, ${hi.toFixed(4)}]` +
    `   solver failures = ${c.failures()}   (${(performance.now() - t).toFixed(0)} ms)`;
}

function runRics(out) {
  const t = performance.now();
  const r = rics(num("r-alpha"), num("r-rho"));
  out.textContent =
    `lambda*_min = ${r.lambda_star_min.toFixed(6)}   delta_min = ${r.delta_min.toFixed(6)}\n` +
    `lambda*_max = ${r.lambda_star_max.toFixed(6)}   delta_max = ${r.delta_max.toFixed(6)}` +
    `   (${(performance.now() - t).toFixed(0)} ms)`;
}

function runSample(out) {
  const t = performance.now();
  const s = sample_subsets(num("s-n"), num("s-alpha"), num("s-s"), num("s-mu"), num("s-sweeps"), BigInt(num("s-seed")));
  const x = s.centers(), p = s.sampled(), q = s.exact();
  // trim empty bins at both ends
  const used = x.map((_, i) => p[i] > 0 || (q.length && q[i] > 0));
  const a = used.indexOf(true), b = used.lastIndexOf(true) + 1;
  const series = [{ x: x.slice(a, b), y: p.slice(a, b), color: "#9ecae1", style: "bars", label: "sampled" }];
  let tv = "";
  if (q.length) {
    series.push({ x: x.slice(a, b), y: q.slice(a, b), color: "#d62728", label: "exact" });
    tv = `   total variation = ${(p.reduce((acc, v, i) => acc + Math.abs(v - q[i]), 0) / 2).toFixed(4)}`;
  }
  plot($("s-plot"), series, { ymin: 0, xlabel: "lambda" });
  out.textContent =
    `acceptance = ${s.acceptance().toFixed(3)}   most extreme lambda = ${s.extreme().toFixed(6)}${tv}` +
    `   (${(performance.now() - t).toFixed(0)} ms)`;
}

await init();
$("c-run").onclick = guarded("c-out", runCurves);
$("r-run").onclick = guarded("r-out", runRics);
$("s-run").onclick = guarded("s-out", runSample);
$("c-run").click();
