/**
 * SVG scene view plus a HUD of machine-readable status fields.
 *
 * The 3D view is a plain perspective projection onto SVG primitives: cloud
 * points become circles, each wrist gets an RGB axis triad, and the finger
 * joints are sketched as two-segment fans. No canvas or WebGL, so the view
 * renders anywhere a DOM exists, test runners included.
 *
 * Every HUD field is mirrored into a data-* attribute holding the exact
 * String() / JSON of the underlying value; tests and scripts probe those
 * instead of scraping display text.
 */

import { applyPose, ArmState, Pose7, StateUpdate, Vec3 } from "./protocol.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const VIEW_W = 800;
const VIEW_H = 600;
const AXIS_LEN = 0.08; // meters
const AXIS_COLORS = ["#e05c4b", "#5cb85c", "#4b8be0"]; // x, y, z
const FINGER_COLOR = "#c9a227";

interface Camera {
  yaw: number;
  pitch: number;
  dist: number;
  target: Vec3;
  fov: number; // vertical, radians
}

export class Renderer {
  readonly hud: HTMLElement;
  readonly svg: SVGSVGElement;
  private cloudGroup: SVGGElement;
  private armGroups: { left: SVGGElement; right: SVGGElement };
  private cloudPool: SVGCircleElement[] = [];
  private banner: HTMLElement;
  private camera: Camera = {
    yaw: -0.6,
    pitch: 0.45,
    dist: 1.6,
    target: [0, 0, 0.1],
    fov: Math.PI / 4,
  };

  constructor(root: HTMLElement) {
    const doc = root.ownerDocument;

    this.banner = doc.createElement("div");
    this.banner.className = "banner";
    this.banner.hidden = true;
    root.appendChild(this.banner);

    this.hud = doc.createElement("div");
    this.hud.className = "hud";
    this.hud.dataset.phase = "";
    this.hud.dataset.tick = "";
    this.hud.dataset.mode = "";
    this.hud.dataset.connection = "disconnected";
    this.hud.dataset.status = "";
    this.hud.innerHTML = [
      '<span class="hud-phase"></span>',
      '<span class="hud-tick"></span>',
      '<span class="hud-mode"></span>',
      '<span class="hud-connection"></span>',
      '<span class="hud-status"></span>',
    ].join(" ");
    root.appendChild(this.hud);

    this.svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
    this.svg.setAttribute("viewBox", `0 0 ${VIEW_W} ${VIEW_H}`);
    this.svg.setAttribute("class", "scene");
    root.appendChild(this.svg);

    this.cloudGroup = doc.createElementNS(SVG_NS, "g") as SVGGElement;
    this.cloudGroup.setAttribute("class", "cloud");
    this.svg.appendChild(this.cloudGroup);

    this.armGroups = {
      left: this.makeArmGroup(doc, "left"),
      right: this.makeArmGroup(doc, "right"),
    };
  }

  private makeArmGroup(doc: Document, name: "left" | "right"): SVGGElement {
    const g = doc.createElementNS(SVG_NS, "g") as SVGGElement;
    g.setAttribute("class", `arm arm-${name}`);
    g.dataset.arm = name;
    g.dataset.pose = "";
    g.dataset.joints = "";
    for (let i = 0; i < 3; i++) {
      const line = doc.createElementNS(SVG_NS, "line");
      line.setAttribute("class", `axis axis-${"xyz"[i]}`);
      line.setAttribute("stroke", AXIS_COLORS[i]!);
      line.setAttribute("stroke-width", "2.5");
      g.appendChild(line);
    }
    for (let f = 0; f < 4; f++) {
      const path = doc.createElementNS(SVG_NS, "polyline");
      path.setAttribute("class", `finger finger-${f}`);
      path.setAttribute("fill", "none");
      path.setAttribute("stroke", FINGER_COLOR);
      path.setAttribute("stroke-width", "1.5");
      g.appendChild(path);
    }
    this.svg.appendChild(g);
    return g;
  }

  // -- camera ---------------------------------------------------------------

  orbit(dyaw: number, dpitch: number): void {
    this.camera.yaw += dyaw;
    const lim = Math.PI / 2 - 0.05;
    this.camera.pitch = Math.max(-lim, Math.min(lim, this.camera.pitch + dpitch));
  }

  zoom(factor: number): void {
    this.camera.dist = Math.max(0.3, Math.min(8, this.camera.dist * factor));
  }

  /** World point -> [screen x, screen y] or null when behind the camera. */
  project(p: Vec3): [number, number] | null {
    const c = this.camera;
    const cy = Math.cos(c.yaw);
    const sy = Math.sin(c.yaw);
    const cp = Math.cos(c.pitch);
    const sp = Math.sin(c.pitch);
    // camera sits on an orbit around target, looking at it; world z is up
    const dx = p[0] - c.target[0];
    const dy = p[1] - c.target[1];
    const dz = p[2] - c.target[2];
    // rotate into camera-aligned axes: right, up, forward
    const rx = -sy * dx + cy * dy;
    const fz = cy * cp * dx + sy * cp * dy + sp * dz;
    const uz = -cy * sp * dx - sy * sp * dy + cp * dz;
    const depth = c.dist - fz;
    if (depth <= 1e-6) return null;
    const scale = VIEW_H / 2 / Math.tan(c.fov / 2);
    return [VIEW_W / 2 + (rx * scale) / depth, VIEW_H / 2 - (uz * scale) / depth];
  }

  // -- HUD ------------------------------------------------------------------

  setPhase(phase: string): void {
    this.hud.dataset.phase = phase;
    this.text(".hud-phase", phase);
  }

  setConnection(state: string): void {
    this.hud.dataset.connection = state;
    this.text(".hud-connection", state);
  }

  setStatus(msg: string): void {
    this.hud.dataset.status = msg;
    this.text(".hud-status", msg);
  }

  /** Fatal, sticky message (version mismatch). */
  showBanner(msg: string): void {
    this.banner.hidden = false;
    this.banner.textContent = msg;
  }

  private text(sel: string, value: string): void {
    const el = this.hud.querySelector(sel);
    if (el) el.textContent = value;
  }

  // -- scene ----------------------------------------------------------------

  renderState(s: StateUpdate): void {
    this.hud.dataset.tick = String(s.tick);
    this.hud.dataset.mode = s.mode;
    this.hud.dataset.query = String(s.query);
    this.text(".hud-tick", `tick ${s.tick}`);
    this.text(".hud-mode", s.mode);

    this.renderCloud(s.cloud);
    this.renderArm(this.armGroups.left, s.left);
    this.renderArm(this.armGroups.right, s.right);
  }

  /** Empty scene between rollouts. */
  clearScene(): void {
    for (const c of this.cloudPool) c.setAttribute("display", "none");
    this.hud.dataset.tick = "";
    this.text(".hud-tick", "");
  }

  cloudCount(): number {
    return this.cloudPool.filter((c) => c.getAttribute("display") !== "none").length;
  }

  private renderCloud(cloud: number[][]): void {
    const doc = this.svg.ownerDocument;
    while (this.cloudPool.length < cloud.length) {
      const c = doc.createElementNS(SVG_NS, "circle") as SVGCircleElement;
      c.setAttribute("r", "1.6");
      this.cloudGroup.appendChild(c);
      this.cloudPool.push(c);
    }
    for (let i = 0; i < this.cloudPool.length; i++) {
      const el = this.cloudPool[i]!;
      const row = cloud[i];
      if (!row) {
        el.setAttribute("display", "none");
        continue;
      }
      const pt = this.project([row[0]!, row[1]!, row[2]!]);
      if (!pt) {
        el.setAttribute("display", "none");
        continue;
      }
      el.removeAttribute("display");
      el.setAttribute("cx", pt[0].toFixed(1));
      el.setAttribute("cy", pt[1].toFixed(1));
      const r = Math.round(255 * row[3]!);
      const g = Math.round(255 * row[4]!);
      const b = Math.round(255 * row[5]!);
      el.setAttribute("fill", `rgb(${r},${g},${b})`);
    }
  }

  private renderArm(group: SVGGElement, arm: ArmState): void {
    group.dataset.pose = JSON.stringify(arm.pose);
    group.dataset.joints = JSON.stringify(arm.joints);

    const origin = this.project(applyPose(arm.pose, [0, 0, 0]));
    const axes: Vec3[] = [
      [AXIS_LEN, 0, 0],
      [0, AXIS_LEN, 0],
      [0, 0, AXIS_LEN],
    ];
    const lines = group.querySelectorAll("line");
    for (let i = 0; i < 3; i++) {
      const line = lines[i]!;
      const tip = this.project(applyPose(arm.pose, axes[i]!));
      if (!origin || !tip) {
        line.setAttribute("display", "none");
        continue;
      }
      line.removeAttribute("display");
      line.setAttribute("x1", origin[0].toFixed(1));
      line.setAttribute("y1", origin[1].toFixed(1));
      line.setAttribute("x2", tip[0].toFixed(1));
      line.setAttribute("y2", tip[1].toFixed(1));
    }

    // schematic fingers: 4 chains of 4 joints each, drawn as 2-segment fans
    // in the wrist x/z plane; segment direction bends with the summed angles
    const polys = group.querySelectorAll("polyline");
    for (let f = 0; f < 4; f++) {
      const poly = polys[f]!;
      const base: Vec3 = [0.03 + 0.015 * f, 0, 0.02];
      const j = arm.joints.slice(f * 4, f * 4 + 4);
      const a1 = j[0]! + j[1]!;
      const a2 = a1 + j[2]! + j[3]!;
      const seg = 0.035;
      const mid: Vec3 = [
        base[0] + seg * Math.cos(a1),
        base[1],
        base[2] + seg * Math.sin(a1),
      ];
      const tip: Vec3 = [
        mid[0] + seg * Math.cos(a2),
        mid[1],
        mid[2] + seg * Math.sin(a2),
      ];
      const pts = [base, mid, tip]
        .map((p) => this.project(applyPose(arm.pose, p)))
        .filter((p): p is [number, number] => p !== null)
        .map((p) => `${p[0].toFixed(1)},${p[1].toFixed(1)}`)
        .join(" ");
      poly.setAttribute("points", pts);
    }
  }
}
