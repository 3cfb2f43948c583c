import init, { basisCurves, salehFit, mseRace } from "./pkg/aopsic_wasm_demo.js";

const DISTRIBUTIONS = {
  "CN(0,1) + 4QAM": { kind: "mixture", components: [{ kind: "complex-gaussian", variance: 1 }, { kind: "qam", order: 4 }] },
  "complex Gaussian": { kind: "complex-gaussian", variance: 1 },
  "uniform real [-1,1]": { kind: "uniform-real", half_width: 1 },
  "exponential": { kind: "exponential", rate: 1 },
  "16QAM": { kind: "qam", order: 16 },
  "64QAM": { kind: "qam", order: 64 },
  "256QAM": { kind: "qam", order: 256 },
};
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const dist = (id) => JSON.stringify(DISTRIBUTIONS[$(id).value]);

function plot(canvas, x, series, { ylabel = "", bars = null, hline = null } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 44;
  ctx.clearRect(0, 0, w, h);
  const ys = series.flatMap((s) => s.y).filter(Number.isFinite);
  if (hline !== null) ys.push(hline);
  let lo = Math.min(...ys), hi = Math.max(...ys);
  if (lo === hi) { lo -= 1; hi += 1; }
  const x0 = x[0], x1 = x[x.length - 1];
  const px = (v) => pad + ((v - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (v) => h - pad - ((v - lo) / (hi - lo)) * (h - 2 * pad);

  if (bars) {
    const top = Math.max(...bars);
    const bw = (w - 2 * pad) / bars.length;
    ctx.fillStyle = "#eee";
    bars.forEach((b, i) => {
      const bh = (b / top) * (h - 2 * pad);
      ctx.fillRect(pad + i * bw, h - pad - bh, bw - 1, bh);
    });
  }

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  for (let i = 0; i <= 4; i++) {
    const v = lo + ((hi - lo) * i) / 4;
    ctx.fillText(v.toPrecision(3), 2, py(v) + 4);
    const u = x0 + ((x1 - x0) * i) / 4;
    ctx.fillText(u.toPrecision(3), px(u) - 10, h - pad + 16);
  }
  ctx.fillText(ylabel, pad, pad - 8);

  if (hline !== null) {
    ctx.setLineDash([4, 4]);
    ctx.strokeStyle = "#888";
    ctx.beginPath();
    ctx.moveTo(pad, py(hline));
    ctx.lineTo(w - pad, py(hline));
    ctx.stroke();
    ctx.setLineDash([]);
  }

  series.forEach((s, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let pen = false;
    s.y.forEach((v, i) => {
      if (!Number.isFinite(v)) { pen = false; return; }
      pen ? ctx.lineTo(px(x[i]), py(v)) : ctx.moveTo(px(x[i]), py(v));
      pen = true;
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.label, w - pad - 90, pad + 14 + 14 * k);
  });
}

function guarded(out, f) {
  return () => {
    $(out).classList.remove("err");
    try {
      f();
    } catch (e) {
      $(out).classList.add("err");
      $(out).textContent = String(e);
    }
  };
}

function runBasis() {
  const r = JSON.parse(basisCurves(dist("b-dist"), num("b-order"), num("b-max"), 200));
  const series = r.curves.map((y, p) => ({ label: `phi_${2 * p + 1}`, y }));
  plot($("b-plot"), r.amplitude, series, { ylabel: "phi_p(a), real axis", bars: r.density });
  $("b-out").textContent =
    `${r.label}: effective rank ${r.effective_rank}\n` +
    r.coeffs.map((c, p) => `phi_${2 * p + 1}: ` + c.map((v) => v.toFixed(5)).join(", ")).join("\n");
}

function runSaleh() {
  const r = JSON.parse(salehFit(num("s-gamma"), num("s-beta"), num("s-order"), dist("s-dist"), 200));
  plot($("s-plot"), r.amplitude, [{ label: "Saleh", y: r.saleh }, { label: "fit", y: r.fit }], { ylabel: "|f(a)|" });
  $("s-out").textContent =
    `residual ${r.residual_db.toFixed(2)} dB\n` +
    r.weights.map(([re, im], p) => `w_${2 * p + 1} = ${re.toFixed(5)} ${im < 0 ? "-" : "+"} ${Math.abs(im).toFixed(5)}j`).join("\n");
}

function runRace() {
  const started = performance.now();
  const r = JSON.parse(mseRace(dist("r-dist"), num("r-order"), num("r-step"), num("r-n"), BigInt(num("r-seed"))));
  const series = r.traces.map(([label, y]) => ({ label, y }));
  plot($("r-plot"), r.sample, series, { ylabel: "MSE (dB)", hline: r.noise_floor_db });
  const last = r.traces.map(([label, y]) => `${label}: ${y.length ? y[y.length - 1].toFixed(2) + " dB" : "diverged"}`);
  $("r-out").textContent =
    `noise floor ${r.noise_floor_db.toFixed(2)} dB, ${(performance.now() - started).toFixed(0)} ms\n` + last.join("\n");
}

await init();
for (const sel of document.querySelectorAll("select.dist")) {
  for (const name of Object.keys(DISTRIBUTIONS)) sel.add(new Option(name));
}
$("b-go").onclick = guarded("b-out", runBasis);
$("s-go").onclick = guarded("s-out", runSaleh);
$("r-go").onclick = guarded("r-out", runRace);
runBasis();
runSaleh();
runRace();
