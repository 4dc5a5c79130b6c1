import init, { feasibility_curve, solve_finite, solve_ladder } from "./pkg/mfdbsde_web.js";

const $ = (id) => document.getElementById(id);

// series: [{xs, ys, color, label}]
function plot(canvas, series, { logx = false, logy = false, hline = null } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const tx = (x) => (logx ? Math.log10(x) : x);
  const ty = (y) => (logy ? Math.log10(y) : y);
  const pts = series.flatMap((s) =>
    s.xs.map((x, i) => [tx(x), ty(s.ys[i])]).filter(([a, b]) => Number.isFinite(a) && Number.isFinite(b)));
  if (hline !== null) pts.push([pts.length ? pts[0][0] : 0, ty(hline)]);
  if (!pts.length) return;
  let [x0, x1] = [Math.min(...pts.map((p) => p[0])), Math.max(...pts.map((p) => p[0]))];
  let [y0, y1] = [Math.min(...pts.map((p) => p[1])), Math.max(...pts.map((p) => p[1]))];
  if (x1 === x0) x1 = x0 + 1;
  if (y1 === y0) { y0 -= 0.5; y1 += 0.5; }
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  const fmt = (v, log) => (log ? "1e" + v.toFixed(1) : v.toPrecision(3));
  ctx.fillText(fmt(x0, logx), pad, h - pad + 14);
  ctx.fillText(fmt(x1, logx), w - pad - 30, h - pad + 14);
  ctx.fillText(fmt(y1, logy), 2, pad + 4);
  ctx.fillText(fmt(y0, logy), 2, h - pad);

  if (hline !== null) {
    ctx.strokeStyle = "#c33";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(pad, py(ty(hline)));
    ctx.lineTo(w - pad, py(ty(hline)));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    let started = false;
    s.xs.forEach((x, i) => {
      const a = tx(x), b = ty(s.ys[i]);
      if (!Number.isFinite(a) || !Number.isFinite(b)) { started = false; return; }
      if (started) ctx.lineTo(px(a), py(b)); else ctx.moveTo(px(a), py(b));
      started = true;
    });
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, w - pad - 160, pad + 14 + 14 * k);
  });
}

function guarded(out, f) {
  try {
    out.classList.remove("err");
    f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e);
  }
}

function runCurve() {
  const out = $("c-out");
  guarded(out, () => {
    const mode = $("c-mode").value;
    const horizon = Number($("c-t").value);
    const s = Number($("c-s").value);
    const m = mode === "finite_point" ? { mode, horizon, shift: s }
      : mode === "special_two_point" ? { mode, horizon, delta: s }
      : { mode, r: s };
    const req = { mode: m, lipschitz: Number($("c-lip").value), budget: 300 };
    const r = JSON.parse(feasibility_curve(JSON.stringify(req)));
    plot($("c-plot"), [{ xs: r.betas, ys: r.values, color: "#1660a8", label: "condition(beta)" }],
      { logx: true, logy: true, hline: 1 });
    out.textContent = JSON.stringify({
      feasible: r.feasible, best_beta: r.best_beta, best_value: r.best_value, best_epsilon: r.best_epsilon,
    }, null, 2);
  });
}

function runFinite() {
  const out = $("f-out");
  guarded(out, () => {
    const r = JSON.parse(solve_finite($("f-config").value));
    const p = r.path;
    plot($("f-plot"), [
      { xs: p.times, ys: p.mean_y, color: "#1660a8", label: "E[Y(t)]" },
      { xs: p.times, ys: p.min_y, color: "#aaa", label: "min Y(t)" },
      { xs: p.times, ys: p.max_y, color: "#777", label: "max Y(t)" },
    ]);
    out.textContent = JSON.stringify({
      route: r.route, y0: r.y0, beta: r.beta, condition: r.condition, iterations: r.iterations,
      last_distance: r.distances[r.distances.length - 1], warnings: r.warnings,
    }, null, 2);
  });
}

function runLadder() {
  const out = $("l-out");
  guarded(out, () => {
    const r = JSON.parse(solve_ladder($("l-config").value));
    const p = r.path;
    plot($("l-plot"), [
      { xs: p.times, ys: p.mean_y, color: "#1660a8", label: "E[Y(t)], last rung" },
      { xs: p.times, ys: p.times.map((t) => Math.exp(-t) / 2), color: "#2a2", label: "e^{-t}/2" },
    ]);
    out.textContent = JSON.stringify({
      horizons: r.horizons, y0: r.y0, deltas: r.deltas, tails: r.tails,
      converged_at: r.converged_at, warnings: r.warnings,
    }, null, 2);
  });
}

await init();
$("c-run").onclick = runCurve;
$("f-run").onclick = runFinite;
$("l-run").onclick = runLadder;
runCurve();
