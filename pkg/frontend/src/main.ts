/** Browser entry point: mount the review app on the host page. */

import { ServiceClient } from "./api";
import { ReviewApp } from "./app";

function mount(): void {
  const slate = document.getElementById("slate");
  const explanation = document.getElementById("explanation");
  const status = document.getElementById("status");
  if (!slate || !explanation || !status) {
    throw new Error("host page is missing #slate, #explanation, or #status");
  }
  const base = (window as { ONTOPLACE_SERVICE_URL?: string }).ONTOPLACE_SERVICE_URL
    ?? "http://127.0.0.1:8420";
  const app = new ReviewApp({ slate, explanation, status }, new ServiceClient(base));
  void app.start();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  mount();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", mount);
}
