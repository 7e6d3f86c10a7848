/**
 * Browser bootstrap: wires the page controls to an App instance talking to
 * a live rollout service.
 */

import { App } from "./app.js";
import { Role } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const root = el<HTMLDivElement>("view");
  const urlInput = el<HTMLInputElement>("url");
  const roleSelect = el<HTMLSelectElement>("role");

  const defaultUrl = `ws://${location.hostname || "localhost"}:8000/ws`;
  urlInput.value = urlInput.value || defaultUrl;

  let app: App | null = null;

  el<HTMLButtonElement>("connect").addEventListener("click", () => {
    app?.close();
    root.replaceChildren();
    app = new App(root, {
      url: urlInput.value,
      role: roleSelect.value as Role,
    });
    app.connect();
  });

  el<HTMLButtonElement>("start").addEventListener("click", () => {
    const ticks = Number(el<HTMLInputElement>("ticks").value) || 100;
    const policy = el<HTMLSelectElement>("policy").value;
    const lockstep = el<HTMLInputElement>("lockstep").checked;
    const dataset = el<HTMLInputElement>("dataset").value || undefined;
    app?.startRollout({ policy, ticks, lockstep, dataset });
  });

  el<HTMLButtonElement>("pause").addEventListener("click", () => app?.pause());
  el<HTMLButtonElement>("resume").addEventListener("click", () => app?.resume());
  el<HTMLButtonElement>("save").addEventListener("click", () => {
    const path = el<HTMLInputElement>("savepath").value;
    if (path) app?.saveDPrime(path);
  });

  // camera control: drag orbits, wheel zooms
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  root.addEventListener("mousedown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
  });
  window.addEventListener("mouseup", () => (dragging = false));
  window.addEventListener("mousemove", (e) => {
    if (!dragging || !app) return;
    app.renderer.orbit((e.clientX - lastX) * 0.008, (e.clientY - lastY) * 0.008);
    lastX = e.clientX;
    lastY = e.clientY;
  });
  root.addEventListener("wheel", (e) => {
    e.preventDefault();
    app?.renderer.zoom(e.deltaY > 0 ? 1.1 : 1 / 1.1);
  });
}

main();
