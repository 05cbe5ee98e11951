import type { SessionController } from "./state";
import type { KappaPair, LabelTally, SessionSummary } from "./types";
import { CATEGORIES } from "./types";

function el(
  tag: string,
  attrs: Record<string, string> = {},
  children: Array<Node | string> = [],
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function formatKappa(pair: KappaPair | null | undefined): string {
  return pair ? `${pair.full.toFixed(2)} / ${pair.binary.toFixed(2)}` : "—";
}

function averageKappa(summary: SessionSummary): string {
  const pairs = Object.values(summary.kappa ?? {}).filter(
    (pair): pair is KappaPair => pair !== null,
  );
  if (!pairs.length) return "—";
  const full = pairs.reduce((sum, pair) => sum + pair.full, 0) / pairs.length;
  return full.toFixed(2);
}

function sessionMetric(summary: SessionSummary): string {
  if (summary.kind === "iaa") return `κ ${averageKappa(summary)}`;
  const tallies = Object.values(summary.labels ?? {});
  const remap = tallies.filter((tally) => tally.majority === "remap_to_clean").length;
  const keep = tallies.filter((tally) => tally.majority === "keep").length;
  return `${remap} remap / ${keep} keep`;
}

function answeredTotal(summary: SessionSummary): number {
  return Object.values(summary.completed).reduce((sum, count) => sum + count, 0);
}

function renderDashboard(controller: SessionController): HTMLElement {
  const { sessions } = controller.state;
  const panel = el("section", { class: "dashboard" }, [
    el("h1", {}, ["Review sessions"]),
  ]);
  if (!sessions.length) {
    panel.append(
      el("p", { class: "empty-state", "data-testid": "empty-state" }, [
        "No sessions yet. Create one against the review service (POST /sessions).",
      ]),
    );
    return panel;
  }
  const list = el("ul", { class: "session-list" });
  for (const summary of sessions) {
    const open = el(
      "button",
      { "data-testid": `open-${summary.session_id}`, class: "open-session" },
      [`open ${summary.session_id}`],
    );
    open.addEventListener("click", () => void controller.openSession(summary.session_id));
    list.append(
      el("li", { class: "session-row" }, [
        el("span", { class: "session-kind" }, [summary.kind]),
        el("span", { class: "session-progress", "data-testid": "session-progress" }, [
          `${answeredTotal(summary)}/${summary.total_items} answered`,
        ]),
        el("span", { class: "session-metric", "data-testid": "session-metric" }, [
          sessionMetric(summary),
        ]),
        open,
      ]),
    );
  }
  panel.append(list);
  return panel;
}

function renderContext(lines: string[], cls: string): HTMLElement {
  const block = el("div", { class: `context ${cls}` });
  for (const line of lines) block.append(el("p", { class: "context-line" }, [line]));
  return block;
}

function renderVerificationForm(controller: SessionController): HTMLElement {
  const { form, pendingSubmit } = controller.state;
  const wrap = el("div", { class: "verdict-form" });
  const high = el(
    "button",
    { "data-testid": "mark-high", class: form.lowQuality === false ? "selected" : "" },
    ["high quality (h)"],
  );
  const low = el(
    "button",
    { "data-testid": "mark-low", class: form.lowQuality === true ? "selected" : "" },
    ["low quality (l)"],
  );
  if (pendingSubmit) {
    high.setAttribute("disabled", "");
    low.setAttribute("disabled", "");
  }
  high.addEventListener("click", () => controller.setLowQuality(false));
  low.addEventListener("click", () => controller.setLowQuality(true));
  wrap.append(high, low);
  return wrap;
}

function renderIaaForm(controller: SessionController): HTMLElement {
  const { form, pendingSubmit } = controller.state;
  const blind = controller.blindActive();
  const wrap = el("div", { class: "verdict-form" });
  if (!blind) {
    const agree = el(
      "button",
      { "data-testid": "agree", class: form.agrees === true ? "selected" : "" },
      ["agree (a)"],
    );
    const disagree = el(
      "button",
      { "data-testid": "disagree", class: form.agrees === false ? "selected" : "" },
      ["disagree (d)"],
    );
    agree.addEventListener("click", () => controller.setAgrees(true));
    disagree.addEventListener("click", () => controller.setAgrees(false));
    if (pendingSubmit) {
      agree.setAttribute("disabled", "");
      disagree.setAttribute("disabled", "");
    }
    wrap.append(agree, disagree);
  }

  // fixed 9-way picker: live on disagreement, or always under blind mode
  const picker = el("select", { "data-testid": "category-picker", class: "category-picker" });
  picker.append(
    el("option", { value: "" }, [blind ? "your category…" : "corrected category…"]),
  );
  for (const category of CATEGORIES) {
    const option = el("option", { value: category }, [category]);
    if (form.correctedLabel === category) option.setAttribute("selected", "");
    picker.append(option);
  }
  const pickerLive = blind || form.agrees === false;
  if (!pickerLive || pendingSubmit) picker.setAttribute("disabled", "");
  picker.addEventListener("change", () => {
    const value = (picker as HTMLSelectElement).value;
    if (value) controller.setCorrectedLabel(value as (typeof CATEGORIES)[number]);
  });
  wrap.append(picker);
  return wrap;
}

function renderLiveSummary(controller: SessionController): HTMLElement {
  const { session, annotator, item } = controller.state;
  const wrap = el("aside", { class: "live-summary" });
  if (!session) return wrap;
  if (session.kind === "iaa") {
    const pair = session.kappa?.[annotator] ?? null;
    wrap.append(
      el("p", { "data-testid": "live-kappa" }, [
        `κ (full/binary): ${formatKappa(pair)}`,
      ]),
    );
    return wrap;
  }
  const tally: LabelTally | undefined = item
    ? session.labels?.[item.llm_label]
    : undefined;
  if (tally) {
    wrap.append(
      el("p", { "data-testid": "live-tally" }, [
        `${item?.llm_label}: ${tally.high_quality} high / ${tally.low_quality} low` +
          ` of ${tally.answered} answered → ${tally.majority}`,
      ]),
    );
  }
  return wrap;
}

function renderItem(controller: SessionController): HTMLElement {
  const { item, session, pendingSubmit } = controller.state;
  if (!item || !session) return el("section");
  const { answered, total } = controller.progress();
  const panel = el("section", { class: "item-view" }, [
    el("header", {}, [
      el("span", { class: "progress", "data-testid": "progress" }, [
        `${answered}/${total} answered`,
      ]),
      el("span", { class: "llm-label", "data-testid": "llm-label" }, [
        controller.blindActive() ? "label hidden (blind mode)" : `label: ${item.llm_label}`,
      ]),
    ]),
    renderContext(item.context_before, "before"),
    el("p", { class: "line-text", "data-testid": "line-text" }, [item.text]),
    renderContext(item.context_after, "after"),
  ]);
  panel.append(
    session.kind === "label_verification"
      ? renderVerificationForm(controller)
      : renderIaaForm(controller),
  );
  const submit = el("button", { "data-testid": "submit", class: "submit" }, [
    pendingSubmit ? "saving…" : "submit (Enter)",
  ]);
  if (!controller.canSubmit()) submit.setAttribute("disabled", "");
  submit.addEventListener("click", () => void controller.submit());
  panel.append(submit, renderLiveSummary(controller));
  return panel;
}

function renderDone(controller: SessionController): HTMLElement {
  const session = controller.state.session;
  const panel = el("section", { class: "done-view" }, [
    el("h1", {}, ["Queue complete"]),
  ]);
  if (session) {
    panel.append(
      el("p", { "data-testid": "final-metric" }, [sessionMetric(session)]),
      el("p", { "data-testid": "final-progress" }, [
        `${answeredTotal(session)}/${session.total_items} verdicts recorded`,
      ]),
    );
  }
  const back = el("button", { "data-testid": "back-to-dashboard" }, ["session list"]);
  back.addEventListener("click", () => void controller.loadDashboard());
  panel.append(back);
  return panel;
}

function renderFatal(controller: SessionController): HTMLElement {
  const panel = el("section", { class: "fatal-view" }, [
    el("h1", {}, ["Something went wrong"]),
    el("p", { "data-testid": "fatal-message" }, [controller.state.fatal ?? "unknown error"]),
  ]);
  const back = el("button", { "data-testid": "back-to-dashboard" }, ["session list"]);
  back.addEventListener("click", () => void controller.loadDashboard());
  panel.append(back);
  return panel;
}

export function render(controller: SessionController, root: HTMLElement): void {
  root.replaceChildren();
  const { view, error } = controller.state;
  if (error) {
    const banner = el("div", { class: "error-banner", "data-testid": "error-banner" }, [
      error,
      " ",
    ]);
    const retry = el("button", { "data-testid": "retry" }, ["retry"]);
    retry.addEventListener("click", () => void controller.retry());
    const discard = el("button", { "data-testid": "discard" }, ["discard verdict"]);
    discard.addEventListener("click", () => controller.discardForm());
    banner.append(retry, discard);
    root.append(banner);
  }
  if (view === "dashboard") root.append(renderDashboard(controller));
  else if (view === "item") root.append(renderItem(controller));
  else if (view === "done") root.append(renderDone(controller));
  else root.append(renderFatal(controller));
}
