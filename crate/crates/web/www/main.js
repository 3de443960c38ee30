import init, { smile, price, group_params } from "./pkg/multiscale_heston_web.js";

const num = (id) => Number(document.getElementById(id).value);

function heston() {
  return { kappa: num("kappa"), theta: num("theta"), sigma: num("sigma"), rho: num("rho"), z: num("z"), r: num("r") };
}

function group() {
  return { v1e: num("v1e"), v2e: num("v2e"), v3e: num("v3e"), v4e: num("v4e") };
}

function drawSmile(res) {
  const canvas = document.getElementById("smile-plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const vols = [...res.heston, ...res.multiscale].filter((v) => v !== null);
  if (vols.length === 0) return;
  const lo = Math.min(...vols), hi = Math.max(...vols);
  const pad = 40;
  const k0 = res.strikes[0], k1 = res.strikes[res.strikes.length - 1];
  const x = (k) => pad + ((k - k0) / (k1 - k0)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo || 1)) * (h - 2 * pad);

  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(k0.toFixed(0), pad, h - pad + 14);
  ctx.fillText(k1.toFixed(0), w - pad - 20, h - pad + 14);
  ctx.fillText(hi.toFixed(4), 2, pad + 4);
  ctx.fillText(lo.toFixed(4), 2, h - pad);

  const line = (vs, colour) => {
    ctx.strokeStyle = colour;
    ctx.beginPath();
    let pen = false;
    vs.forEach((v, i) => {
      if (v === null) { pen = false; return; }
      const [px, py] = [x(res.strikes[i]), y(v)];
      pen ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
      pen = true;
    });
    ctx.stroke();
  };
  line(res.heston, "#999");
  line(res.multiscale, "#c33");
  ctx.fillStyle = "#999"; ctx.fillText("Heston", w - 150, pad + 16);
  ctx.fillStyle = "#c33"; ctx.fillText("multiscale", w - 90, pad + 16);
}

function updateSmile() {
  for (const id of ["v1e", "v2e", "v3e", "v4e"]) {
    document.getElementById(`${id}-out`).textContent = num(id).toFixed(4);
  }
  const spot = num("spot");
  const strikes = Array.from({ length: 41 }, (_, i) => spot * (0.75 + (0.5 * i) / 40));
  const err = document.getElementById("smile-err");
  try {
    const res = JSON.parse(smile(JSON.stringify({ heston: heston(), group: group(), spot, expiry: num("smile-expiry"), strikes })));
    err.textContent = "";
    drawSmile(res);
  } catch (e) {
    err.textContent = String(e.message ?? e);
  }
}

function runPrice() {
  const out = document.getElementById("price-out");
  try {
    const req = { heston: heston(), group: group(), spot: num("spot"), strike: num("strike"), expiry: num("expiry"), put: document.getElementById("put").checked };
    out.textContent = JSON.stringify(JSON.parse(price(JSON.stringify(req))), null, 2);
  } catch (e) {
    out.textContent = String(e.message ?? e);
  }
}

function runGroup() {
  const out = document.getElementById("group-out");
  const req = {
    heston: { ...heston(), rho: num("rho-xz") },
    epsilon: num("epsilon"), m: num("m"), nu: num("nu"),
    rho_xy: num("rho-xy"), rho_yz: num("rho-yz"), y0: num("m"), f_kind: "exp_ou",
  };
  try {
    out.textContent = JSON.stringify(JSON.parse(group_params(JSON.stringify(req))), null, 2);
  } catch (e) {
    out.textContent = String(e.message ?? e);
  }
}

await init();
document.querySelectorAll("#heston input, input[type=range], #smile-expiry").forEach((el) => el.addEventListener("input", updateSmile));
document.getElementById("price-go").addEventListener("click", runPrice);
document.getElementById("group-go").addEventListener("click", runGroup);
updateSmile();
