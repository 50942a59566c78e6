import init, { km_weights, simulate_and_fit, hbic_path } from "./pkg/aftsdar_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function frame(canvas, xmin, xmax, ymin, ymax) {
  const ctx = canvas.getContext("2d");
  const pad = 40;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 10, canvas.width - pad - 10, canvas.height - pad - 10);
  if (ymax === ymin) ymax = ymin + 1;
  if (xmax === xmin) xmax = xmin + 1;
  const sx = (x) => pad + ((x - xmin) / (xmax - xmin)) * (canvas.width - pad - 10);
  const sy = (y) => canvas.height - pad - ((y - ymin) / (ymax - ymin)) * (canvas.height - pad - 20);
  ctx.fillStyle = "#555";
  ctx.font = "11px sans-serif";
  ctx.fillText(xmin.toPrecision(3), pad, canvas.height - pad + 14);
  ctx.fillText(xmax.toPrecision(3), canvas.width - 50, canvas.height - pad + 14);
  ctx.fillText(ymax.toPrecision(3), 2, 18);
  ctx.fillText(ymin.toPrecision(3), 2, canvas.height - pad);
  return { ctx, sx, sy };
}

function runKm() {
  const rows = $("km-input").value.trim().split("\n").map((l) => l.trim().split(/[\s,]+/));
  const times = new Float64Array(rows.map((r) => Number(r[0])));
  const status = new Uint8Array(rows.map((r) => Number(r[1])));
  const res = JSON.parse(km_weights(times, status));
  if (res.error) { $("km-out").textContent = res.error; return; }
  const tmax = Math.max(...times);
  const { ctx, sx, sy } = frame($("km-canvas"), 0, tmax, 0, 1);
  ctx.strokeStyle = "#1f5fa8";
  ctx.beginPath();
  let prev = 1;
  ctx.moveTo(sx(0), sy(1));
  for (const pt of res.curve) {
    ctx.lineTo(sx(pt.time), sy(prev));
    ctx.lineTo(sx(pt.time), sy(pt.survival));
    if (!pt.event) ctx.fillRect(sx(pt.time) - 2, sy(pt.survival) - 6, 4, 4);
    prev = pt.survival;
  }
  ctx.lineTo(sx(tmax), sy(prev));
  ctx.stroke();
  $("km-out").textContent = "weights: " + res.weights.map((w) => w.toFixed(4)).join(", ");
}

function runFit() {
  const res = JSON.parse(simulate_and_fit(num("fit-n"), num("fit-p"), num("fit-k"), num("fit-rho"),
    num("fit-cr"), num("fit-t"), num("fit-tau"), num("fit-seed")));
  if (res.error) { $("fit-out").textContent = res.error; return; }
  const p = res.beta_star.length;
  const all = res.beta_star.concat(res.beta_hat);
  const { ctx, sx, sy } = frame($("fit-canvas"), 0, p - 1, Math.min(0, ...all), Math.max(0, ...all));
  const stem = (j, v, color, dx) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(sx(j) + dx, sy(0));
    ctx.lineTo(sx(j) + dx, sy(v));
    ctx.stroke();
  };
  res.beta_star.forEach((v, j) => v !== 0 && stem(j, v, "#bbb", -1));
  res.beta_hat.forEach((v, j) => v !== 0 && stem(j, v, "#c0392b", 1));
  $("fit-out").textContent =
    `true support ${JSON.stringify(res.true_support)}\n` +
    `active set   ${JSON.stringify(res.active_set)}\n` +
    `${res.iterations} iterations (${res.termination}), relative error ${res.relative_error.toExponential(3)}, ` +
    `censoring ${res.realized_censor_rate.toFixed(3)}`;
}

function runPath() {
  const res = JSON.parse(hbic_path(num("fit-n"), num("fit-p"), num("fit-k"), num("fit-rho"),
    num("fit-cr"), num("path-q"), num("fit-seed")));
  if (res.error) { $("path-out").textContent = res.error; return; }
  const ts = res.support_sizes;
  const { ctx, sx, sy } = frame($("path-canvas"), ts[0], ts[ts.length - 1], Math.min(...res.scores), Math.max(...res.scores));
  ctx.strokeStyle = "#1f5fa8";
  ctx.beginPath();
  ts.forEach((t, i) => (i ? ctx.lineTo(sx(t), sy(res.scores[i])) : ctx.moveTo(sx(t), sy(res.scores[i]))));
  ctx.stroke();
  const i = ts.indexOf(res.selected_support_size);
  ctx.fillStyle = "#c0392b";
  ctx.beginPath();
  ctx.arc(sx(ts[i]), sy(res.scores[i]), 4, 0, 2 * Math.PI);
  ctx.fill();
  $("path-out").textContent =
    `selected T = ${res.selected_support_size}, active set ${JSON.stringify(res.selected_active_set)}\n` +
    `true support ${JSON.stringify(res.true_support)}`;
}

await init();
$("km-run").onclick = runKm;
$("fit-run").onclick = runFit;
$("path-run").onclick = runPath;
runKm();
