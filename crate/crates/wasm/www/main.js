import init, { potential_field, plan_trajectory, Ring } from "./pkg/lanefree_wasm.js";

const ROAD_W = 10.2;
const FIELD_LEN = 120;

const $ = (id) => document.getElementById(id);

// x1, x2, x3, x4 per obstacle
let obstacles = [50, 3.0, 20, 0, 75, 7.5, 20, 0];

function heat(t) {
  const c = Math.max(0, Math.min(1, t));
  return [255 * Math.min(1, 2 * c), 255 * Math.min(1, 2 - 2 * c) * 0.9, 255 * (1 - c) * 0.6];
}

function drawField() {
  const omega1 = parseFloat($("omega1").value);
  const egoV = parseFloat($("ego-v").value);
  $("omega1-v").textContent = omega1.toFixed(2);
  $("ego-v-v").textContent = egoV;

  const cv = $("field");
  const ctx = cv.getContext("2d");
  const nx = 240, ny = 50;
  const f = potential_field(nx, ny, FIELD_LEN, ROAD_W, egoV, 0, omega1, new Float64Array(obstacles));
  const img = ctx.createImageData(nx, ny);
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      const [r, g, b] = heat(f[j * nx + i]);
      // canvas rows run top-down, x2 runs bottom-up
      const p = 4 * ((ny - 1 - j) * nx + i);
      img.data.set([r, g, b, 255], p);
    }
  }
  const tmp = new OffscreenCanvas(nx, ny);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(tmp, 0, 0, cv.width, cv.height);

  const sx = cv.width / FIELD_LEN, sy = cv.height / ROAD_W;
  ctx.strokeStyle = "#000";
  for (let i = 0; i < obstacles.length; i += 4) {
    const x = obstacles[i], y = obstacles[i + 1];
    ctx.strokeRect((x - 2.125) * sx, cv.height - (y + 0.9) * sy, 4.25 * sx, 1.8 * sy);
  }

  let plan;
  try {
    plan = plan_trajectory(new Float64Array([10, 5.1, egoV, 0]), 30, omega1, new Float64Array(obstacles));
  } catch (e) {
    $("plan-info").textContent = `plan failed: ${e}`;
    return;
  }
  const flag = plan[plan.length - 1];
  ctx.strokeStyle = flag ? "#d00" : "#fff";
  ctx.lineWidth = 2;
  ctx.beginPath();
  for (let k = 0; k + 1 < plan.length; k += 2) {
    const x = plan[k] * sx, y = cv.height - plan[k + 1] * sy;
    k === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  }
  ctx.stroke();
  ctx.lineWidth = 1;
  const kinds = ["regular", "longitudinal emergency", "lateral emergency"];
  $("plan-info").textContent = `8 s plan from x1 = 10 m, x2 = 5.1 m: ${kinds[flag]}`;
}

$("field").addEventListener("click", (ev) => {
  const cv = ev.target;
  const r = cv.getBoundingClientRect();
  const x = ((ev.clientX - r.left) / r.width) * FIELD_LEN;
  const y = (1 - (ev.clientY - r.top) / r.height) * ROAD_W;
  for (let i = 0; i < obstacles.length; i += 4) {
    if (Math.abs(obstacles[i] - x) < 2.2 && Math.abs(obstacles[i + 1] - y) < 1) {
      obstacles.splice(i, 4);
      drawField();
      return;
    }
  }
  obstacles.push(x, Math.max(0.9, Math.min(ROAD_W - 0.9, y)), 20, 0);
  drawField();
});

let ring = null;
let running = true;
let stopped = "";

function restart() {
  try {
    ring = new Ring(parseFloat($("density").value), BigInt($("seed").value));
    stopped = "";
  } catch (e) {
    ring = null;
    $("ring-info").textContent = `${e}`;
  }
}

function drawRing() {
  const cv = $("ring");
  const ctx = cv.getContext("2d");
  ctx.fillStyle = "#f4f4f4";
  ctx.fillRect(0, 0, cv.width, cv.height);
  if (!ring) return;
  const L = ring.road_length();
  const strip = L / 3, gap = 20;
  const h = (cv.height - 2 * gap) / 3;
  const sx = cv.width / strip, sy = h / ROAD_W;
  for (let s = 0; s < 3; s++) {
    ctx.fillStyle = "#ddd";
    ctx.fillRect(0, s * (h + gap), cv.width, h);
  }
  const v = ring.vehicles();
  let speed = 0;
  for (let i = 0; i < v.length; i += 6) {
    const [x1, x2, x3, len, wid, em] = v.subarray(i, i + 6);
    speed += x3;
    const s = Math.min(2, Math.floor(x1 / strip));
    const x = (x1 - s * strip) * sx;
    const y = s * (h + gap) + h - x2 * sy;
    const [r, g, b] = heat(1 - x3 / 35);
    ctx.fillStyle = `rgb(${r},${g},${b})`;
    ctx.fillRect(x - (len / 2) * sx, y - (wid / 2) * sy, len * sx, wid * sy);
    if (em) {
      ctx.strokeStyle = "#d00";
      ctx.strokeRect(x - (len / 2) * sx, y - (wid / 2) * sy, len * sx, wid * sy);
    }
  }
  const n = v.length / 6;
  $("ring-info").textContent = `t = ${ring.time().toFixed(2)} s, ${n} vehicles, mean speed ${(speed / n).toFixed(1)} m/s${stopped}`;
}

function tick() {
  if (running && ring) {
    try {
      ring.advance(1);
    } catch (e) {
      running = false;
      stopped = `, stopped: ${e}`;
    }
  }
  drawRing();
  setTimeout(() => requestAnimationFrame(tick), 0);
}

await init();
for (const id of ["omega1", "ego-v"]) $(id).addEventListener("input", drawField);
$("start").addEventListener("click", () => { restart(); running = true; });
$("pause").addEventListener("click", () => { running = !running; });
drawField();
restart();
tick();
