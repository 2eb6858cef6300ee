import { Explorer } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("server") ?? "http://127.0.0.1:8000";

Explorer.boot(base, document).then(
  (app) => {
    (window as unknown as { explorer: Explorer }).explorer = app;
  },
  (err) => {
    const box = document.getElementById("toast");
    if (box) {
      box.textContent = `cannot reach ${base}: ${err}`;
      box.classList.add("visible");
    }
  },
);
