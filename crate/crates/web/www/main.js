import init, { dilatation_field, modulus_heatmap, ring_curve } from "./pkg/pmodulus_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

// white -> dark red
function heat(t) {
  const s = Math.max(0, Math.min(1, t));
  return `rgb(255,${Math.round(255 * (1 - s))},${Math.round(255 * (1 - s) * (1 - s))})`;
}

function run(out, f) {
  try {
    f();
  } catch (e) {
    $(out).textContent = String(e.message ?? e);
  }
}

function drawCone() {
  const v = JSON.parse(dilatation_field(num("d0"), num("d1"), num("cp"), 84));
  const c = $("cone"), g = c.getContext("2d");
  const nx = v.xs.length, ny = v.ys.length;
  const x0 = v.xs[0], x1 = v.xs[nx - 1], y0 = v.ys[0], y1 = v.ys[ny - 1];
  const sx = (x) => ((x - x0) / (x1 - x0)) * c.width;
  const sy = (y) => c.height - ((y - y0) / (y1 - y0)) * c.height;
  const cw = c.width / nx, ch = c.height / ny;
  g.clearRect(0, 0, c.width, c.height);
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      const k = v.k_inner[j * nx + i];
      g.fillStyle = heat(Math.log(k) / Math.log(v.bound));
      g.fillRect(i * cw, c.height - (j + 1) * ch, cw + 1, ch + 1);
    }
  }
  g.strokeStyle = "rgba(0,0,80,0.5)";
  g.lineWidth = 1;
  for (const line of v.lines) {
    g.beginPath();
    line.forEach(([x, y], k) => (k ? g.lineTo(sx(x), sy(y)) : g.moveTo(sx(x), sy(y))));
    g.stroke();
  }
  const max = Math.max(...v.k_inner);
  $("cone-out").textContent = `max K_I = ${max.toFixed(4)}   bound (d1/d0)^(p(n-1)) = ${v.bound.toFixed(4)}`;
}

function drawModulus() {
  const t0 = performance.now();
  const v = JSON.parse(modulus_heatmap($("family").value, num("mp"), num("res"), num("rad")));
  const [nx, ny] = v.dims;
  const c = $("heat"), g = c.getContext("2d");
  const cw = c.width / nx, ch = c.height / ny;
  const top = Math.max(...v.rho);
  g.clearRect(0, 0, c.width, c.height);
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      const idx = i + nx * j;
      g.fillStyle = v.mask[idx] ? heat(v.rho[idx] / top) : "#bbb";
      g.fillRect(i * cw, c.height - (j + 1) * ch, cw + 1, ch + 1);
    }
  }
  const sx = (x) => ((x - v.origin[0]) / (v.h * nx)) * c.width;
  const sy = (y) => c.height - ((y - v.origin[1]) / (v.h * ny)) * c.height;
  g.strokeStyle = "rgba(0,60,160,0.6)";
  for (const path of v.paths) {
    g.beginPath();
    path.forEach(([x, y], k) => (k ? g.lineTo(sx(x), sy(y)) : g.moveTo(sx(x), sy(y))));
    g.stroke();
  }
  const ms = (performance.now() - t0).toFixed(0);
  $("mod-out").textContent =
    `M_p <= ${v.value}\nM_p >= ${v.lower_bound}\nconverged ${v.converged} after ${v.outer_iters} iterations (${ms} ms)`;
}

function drawRing() {
  const v = JSON.parse(ring_curve(num("rn"), num("rp"), num("rmax"), 200));
  const c = $("ring"), g = c.getContext("2d");
  const all = v.exact.concat(v.ring_lower_bound).filter(Number.isFinite);
  const lo = Math.log(Math.min(...all)), hi = Math.log(Math.max(...all));
  const r0 = 1, r1 = v.ratio[v.ratio.length - 1];
  const sx = (r) => 40 + ((r - r0) / (r1 - r0)) * (c.width - 50);
  const sy = (y) => c.height - 20 - ((Math.log(y) - lo) / (hi - lo || 1)) * (c.height - 30);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#999";
  g.strokeRect(40, 10, c.width - 50, c.height - 30);
  for (const [key, color] of [["exact", "#1f5fbf"], ["ring_lower_bound", "#c0392b"]]) {
    g.strokeStyle = color;
    g.lineWidth = 2;
    g.beginPath();
    v[key].forEach((y, k) => (k ? g.lineTo(sx(v.ratio[k]), sy(y)) : g.moveTo(sx(v.ratio[k]), sy(y))));
    g.stroke();
  }
  g.fillStyle = "#222";
  g.fillText("b/a", c.width - 30, c.height - 5);
  g.fillText("log scale", 45, 22);
  $("ring-out").textContent = `b_np = ${v.b_np.toPrecision(6)}   blue: exact ring modulus   red: lower bound`;
}

await init();
$("cone-go").onclick = () => run("cone-out", drawCone);
$("mod-go").onclick = () => run("mod-out", drawModulus);
$("ring-go").onclick = () => run("ring-out", drawRing);
run("cone-out", drawCone);
run("ring-out", drawRing);
