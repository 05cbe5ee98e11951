import { ReviewApi, type FetchLike } from "./api";
import { render } from "./render";
import { SessionController } from "./state";

export interface MountOptions {
  baseUrl?: string;
  annotator?: string;
  fetchFn?: FetchLike;
  blind?: boolean;
}

/** Wire the controller to a root element; returns the controller for tests. */
export function mountApp(root: HTMLElement, options: MountOptions = {}): SessionController {
  const api = new ReviewApi(
    options.baseUrl ?? "",
    options.fetchFn ?? ((...args) => fetch(...args)),
  );
  const controller = new SessionController(
    api,
    options.annotator ?? "",
    options.blind ?? false,
  );

  const bar = document.createElement("div");
  bar.className = "annotator-bar";
  const input = document.createElement("input");
  input.placeholder = "annotator id";
  input.value = controller.state.annotator;
  input.addEventListener("change", () => controller.setAnnotator(input.value.trim()));
  const blindToggle = document.createElement("label");
  const checkbox = document.createElement("input");
  checkbox.type = "checkbox";
  checkbox.checked = controller.state.blind;
  checkbox.setAttribute("data-testid", "blind-toggle");
  checkbox.addEventListener("change", () => controller.setBlind(checkbox.checked));
  blindToggle.append(checkbox, " blind agreement mode");
  bar.append(input, blindToggle);

  const view = document.createElement("div");
  view.id = "view";
  root.replaceChildren(bar, view);

  controller.onChange(() => render(controller, view));
  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement) return;
    controller.handleKey(event.key);
  });
  void controller.loadDashboard();
  return controller;
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) {
    const annotator = window.localStorage.getItem("annotator") ?? "";
    const controller = mountApp(root, { annotator });
    controller.onChange((state) =>
      window.localStorage.setItem("annotator", state.annotator),
    );
  }
}
