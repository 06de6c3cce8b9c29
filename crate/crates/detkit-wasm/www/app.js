import init, { overlap_metrics, augment_preview, decode_playground } from "./pkg/detkit_wasm.js";

// ---------- IoU / GIoU explorer ----------

const iouCanvas = document.getElementById("iou-canvas");
const iouCtx = iouCanvas.getContext("2d");
const iouReadout = document.getElementById("iou-readout");

const boxes = [
  { x1: 60, y1: 70, x2: 190, y2: 200, stroke: "#5aa2f7", fill: "rgba(90,162,247,0.18)" },
  { x1: 130, y1: 140, x2: 270, y2: 260, stroke: "#f7b55a", fill: "rgba(247,181,90,0.18)" },
];
const HANDLE = 14;
let drag = null;

function drawIou() {
  iouCtx.clearRect(0, 0, iouCanvas.width, iouCanvas.height);
  for (const b of boxes) {
    iouCtx.fillStyle = b.fill;
    iouCtx.strokeStyle = b.stroke;
    iouCtx.lineWidth = 2;
    iouCtx.fillRect(b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1);
    iouCtx.strokeRect(b.x1, b.y1, b.x2 - b.x1, b.y2 - b.y1);
    iouCtx.fillStyle = b.stroke;
    iouCtx.fillRect(b.x2 - HANDLE / 2, b.y2 - HANDLE / 2, HANDLE, HANDLE);
  }
  try {
    const m = JSON.parse(overlap_metrics(
      boxes[0].x1, boxes[0].y1, boxes[0].x2, boxes[0].y2,
      boxes[1].x1, boxes[1].y1, boxes[1].x2, boxes[1].y2,
    ));
    iouReadout.textContent =
      `iou          ${m.iou.toFixed(4)}\n` +
      `giou         ${m.giou.toFixed(4)}\n` +
      `intersection ${m.intersection.toFixed(0)} px²\n` +
      `union        ${m.union.toFixed(0)} px²\n` +
      `enclosing    ${m.enclosing.toFixed(0)} px²`;
  } catch (e) {
    iouReadout.textContent = String(e);
  }
}

function canvasPoint(canvas, event) {
  const r = canvas.getBoundingClientRect();
  return {
    x: (event.clientX - r.left) * canvas.width / r.width,
    y: (event.clientY - r.top) * canvas.height / r.height,
  };
}

iouCanvas.addEventListener("pointerdown", (e) => {
  const p = canvasPoint(iouCanvas, e);
  // topmost box first
  for (let i = boxes.length - 1; i >= 0; i--) {
    const b = boxes[i];
    if (Math.abs(p.x - b.x2) < HANDLE && Math.abs(p.y - b.y2) < HANDLE) {
      drag = { box: b, mode: "resize" };
      iouCanvas.setPointerCapture(e.pointerId);
      return;
    }
    if (p.x >= b.x1 && p.x <= b.x2 && p.y >= b.y1 && p.y <= b.y2) {
      drag = { box: b, mode: "move", dx: p.x - b.x1, dy: p.y - b.y1 };
      iouCanvas.setPointerCapture(e.pointerId);
      return;
    }
  }
});

iouCanvas.addEventListener("pointermove", (e) => {
  if (!drag) return;
  const p = canvasPoint(iouCanvas, e);
  const b = drag.box;
  if (drag.mode === "move") {
    const w = b.x2 - b.x1;
    const h = b.y2 - b.y1;
    b.x1 = Math.min(Math.max(0, p.x - drag.dx), iouCanvas.width - w);
    b.y1 = Math.min(Math.max(0, p.y - drag.dy), iouCanvas.height - h);
    b.x2 = b.x1 + w;
    b.y2 = b.y1 + h;
  } else {
    b.x2 = Math.min(Math.max(b.x1 + 10, p.x), iouCanvas.width);
    b.y2 = Math.min(Math.max(b.y1 + 10, p.y), iouCanvas.height);
  }
  drawIou();
});

iouCanvas.addEventListener("pointerup", () => { drag = null; });

// ---------- augmentation preview ----------

const augCanvas = document.getElementById("aug-canvas");
const augCtx = augCanvas.getContext("2d");
const opSelect = document.getElementById("aug-op");
const paramSlider = document.getElementById("aug-param");
const paramLabel = document.getElementById("aug-param-label");
const paramValue = document.getElementById("aug-param-value");
const nearestToggle = document.getElementById("aug-nearest");

const PARAM_RANGES = {
  rotate: { label: "angle (°)", min: -45, max: 45, step: 1, value: 25 },
  shift_width: { label: "fraction", min: 0.06, max: 0.16, step: 0.005, value: 0.12 },
  shift_height: { label: "fraction", min: 0.06, max: 0.16, step: 0.005, value: 0.12 },
  scale: { label: "shrink", min: 0.03, max: 0.16, step: 0.005, value: 0.10 },
  translate: { label: "dx = dy", min: 0.02, max: 0.09, step: 0.005, value: 0.05 },
  flip_horizontal: null,
  flip_vertical: null,
};

function currentOp() {
  const kind = opSelect.value;
  const v = parseFloat(paramSlider.value);
  switch (kind) {
    case "rotate": return { op: "rotate", degrees: v };
    case "shift_width": return { op: "shift_width", fraction: v };
    case "shift_height": return { op: "shift_height", fraction: v };
    case "scale": return { op: "scale", fraction: v };
    case "translate": return { op: "translate", dx: v, dy: v };
    case "flip_horizontal": return { op: "flip_horizontal" };
    default: return { op: "flip_vertical" };
  }
}

function drawAug() {
  const request = {
    img_w: 160,
    img_h: 160,
    marker: [38, 52, 104, 112],
    op: currentOp(),
    nearest: nearestToggle.checked,
  };
  let preview;
  try {
    preview = augment_preview(JSON.stringify(request));
  } catch (e) {
    augCtx.clearRect(0, 0, augCanvas.width, augCanvas.height);
    augCtx.fillStyle = "#d86a6a";
    augCtx.fillText(String(e), 10, 20);
    return;
  }
  const image = new ImageData(new Uint8ClampedArray(preview.rgba), preview.width, preview.height);
  const off = new OffscreenCanvas(preview.width, preview.height);
  off.getContext("2d").putImageData(image, 0, 0);
  const scale = augCanvas.width / preview.width;
  augCtx.imageSmoothingEnabled = false;
  augCtx.clearRect(0, 0, augCanvas.width, augCanvas.height);
  augCtx.drawImage(off, 0, 0, augCanvas.width, augCanvas.height);

  const b = JSON.parse(preview.boxes_json);
  augCtx.lineWidth = 2;
  augCtx.strokeStyle = "#8b93a3";
  augCtx.setLineDash([6, 4]);
  strokeBox(augCtx, b.original, scale);
  augCtx.setLineDash([]);
  if (b.transformed) {
    augCtx.strokeStyle = "#53d769";
    strokeBox(augCtx, b.transformed, scale);
  }
}

function strokeBox(ctx, [x1, y1, x2, y2], scale) {
  ctx.strokeRect(x1 * scale, y1 * scale, (x2 - x1) * scale, (y2 - y1) * scale);
}

function syncParamControls() {
  const range = PARAM_RANGES[opSelect.value];
  const row = paramSlider.parentElement;
  if (!range) {
    row.style.visibility = "hidden";
    return;
  }
  row.style.visibility = "visible";
  paramLabel.textContent = range.label;
  paramSlider.min = range.min;
  paramSlider.max = range.max;
  paramSlider.step = range.step;
  paramSlider.value = range.value;
  paramValue.value = String(range.value);
}

opSelect.addEventListener("change", () => { syncParamControls(); drawAug(); });
paramSlider.addEventListener("input", () => { paramValue.value = paramSlider.value; drawAug(); });
nearestToggle.addEventListener("change", drawAug);

// ---------- decode + NMS playground ----------

const nmsCanvas = document.getElementById("nms-canvas");
const nmsCtx = nmsCanvas.getContext("2d");
const nmsReadout = document.getElementById("nms-readout");
const seedSlider = document.getElementById("nms-seed");
const gridSelect = document.getElementById("nms-grid");
const confSlider = document.getElementById("nms-conf");
const iouSlider = document.getElementById("nms-iou");
const nmsToggle = document.getElementById("nms-on");

function drawNms() {
  document.getElementById("nms-seed-value").value = seedSlider.value;
  document.getElementById("nms-conf-value").value = Number(confSlider.value).toFixed(2);
  document.getElementById("nms-iou-value").value = Number(iouSlider.value).toFixed(2);
  let boxesJson;
  try {
    boxesJson = decode_playground(
      parseInt(seedSlider.value, 10),
      parseInt(gridSelect.value, 10),
      parseFloat(confSlider.value),
      parseFloat(iouSlider.value),
      nmsToggle.checked,
    );
  } catch (e) {
    nmsReadout.textContent = String(e);
    return;
  }
  const all = JSON.parse(boxesJson);
  const scale = nmsCanvas.width / 640;
  nmsCtx.clearRect(0, 0, nmsCanvas.width, nmsCanvas.height);
  let kept = 0;
  for (const b of all) {
    if (b.kept) kept++;
    const alpha = b.kept ? 0.9 : 0.18;
    nmsCtx.lineWidth = b.kept ? 2 : 1;
    nmsCtx.strokeStyle = b.kept ? `rgba(83,215,105,${alpha})` : `rgba(139,147,163,${alpha})`;
    nmsCtx.strokeRect(b.x1 * scale, b.y1 * scale, (b.x2 - b.x1) * scale, (b.y2 - b.y1) * scale);
  }
  nmsReadout.textContent =
    `${all.length} boxes past the confidence gate\n` +
    `${nmsToggle.checked ? kept + " survive NMS" : "NMS off"}`;
}

for (const el of [seedSlider, confSlider, iouSlider]) el.addEventListener("input", drawNms);
gridSelect.addEventListener("change", drawNms);
nmsToggle.addEventListener("change", drawNms);

// ---------- boot ----------

await init();
drawIou();
syncParamControls();
drawAug();
drawNms();
