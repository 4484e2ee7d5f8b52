// DOM construction. These functions render view models and wire
// callbacks; they hold no state and do no flag logic of their own.

import type { ConfusionView, FinalizeView, MetricsView, RowCard } from "./model.js";
import { REVIEW_FLAGS } from "./model.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function renderBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "banner");
  banner.appendChild(el("span", "", message));
  const retry = el("button", "", "Retry");
  retry.onclick = onRetry;
  banner.appendChild(retry);
  return banner;
}

export interface CardCallbacks {
  onToggleFlag: (card: RowCard, flag: string) => void;
  onSubmit: (card: RowCard, flags: string[]) => void;
  onConfirm: (card: RowCard) => void;
}

export function renderCard(
  card: RowCard,
  selected: boolean,
  pendingFlags: string[],
  callbacks: CardCallbacks,
): HTMLElement {
  const root = el("article", `card ${selected ? "selected" : ""} state-${card.decisionState}`);
  const head = el("header");
  head.appendChild(el("strong", "", card.id));
  head.appendChild(el("span", "url", card.url));
  head.appendChild(el("span", `state state-${card.decisionState}`, card.decisionState));
  root.appendChild(head);

  root.appendChild(el("p", "excerpt", card.excerpt));

  const flags = el("div", "machine-flags");
  flags.appendChild(el("span", "label", "machine:"));
  for (const flag of card.machineFlags) {
    flags.appendChild(el("span", `flag flag-${flag}`, flag));
  }
  root.appendChild(flags);

  for (const { stage, reason } of card.reasons) {
    root.appendChild(el("div", "reason", `${stage}: ${reason}`));
  }

  if (card.decisionFlags) {
    const decision = el("div", "decision-flags");
    decision.appendChild(el("span", "label", "decision:"));
    for (const flag of card.decisionFlags) {
      decision.appendChild(el("span", `flag flag-${flag}`, flag));
    }
    root.appendChild(decision);
  }

  if (selected) {
    const editor = el("div", "editor");
    for (const flag of REVIEW_FLAGS) {
      const label = el("label", "flag-option");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = pendingFlags.includes(flag);
      box.onchange = () => callbacks.onToggleFlag(card, flag);
      label.appendChild(box);
      label.appendChild(document.createTextNode(flag));
      editor.appendChild(label);
    }
    const actions = el("div", "actions");
    const submit = el("button", "", "Submit (enter)");
    submit.onclick = () => callbacks.onSubmit(card, pendingFlags);
    const confirm = el("button", "", "Confirm machine flags (c)");
    confirm.onclick = () => callbacks.onConfirm(card);
    actions.appendChild(submit);
    actions.appendChild(confirm);
    editor.appendChild(actions);
    root.appendChild(editor);
  }
  return root;
}

export function renderQueue(
  cards: RowCard[],
  selectedIndex: number,
  page: number,
  pageSize: number,
  pendingFlags: string[],
  callbacks: CardCallbacks,
): HTMLElement {
  const root = el("section", "queue");
  if (!cards.length) {
    root.appendChild(el("p", "empty", "Nothing to review."));
    return root;
  }
  const pages = Math.ceil(cards.length / pageSize);
  root.appendChild(
    el("p", "pager", `${cards.length} row(s) — page ${page + 1}/${pages} ([ and ] to page, j/k to move)`),
  );
  const start = page * pageSize;
  cards.slice(start, start + pageSize).forEach((card, offset) => {
    const index = start + offset;
    root.appendChild(renderCard(card, index === selectedIndex, pendingFlags, callbacks));
  });
  return root;
}

function renderConfusion(view: ConfusionView): HTMLElement {
  const box = el("div", "confusion");
  box.appendChild(el("h3", "", view.title));
  const table = el("table");
  const rows: [string, string | number][] = [
    ["true positive", view.tp],
    ["false positive", view.fp],
    ["true negative", view.tn],
    ["false negative", view.fn],
    ["accuracy", view.accuracyPercent],
    ["precision", view.precision],
    ["recall", view.recall],
    ["f1", view.f1],
  ];
  for (const [name, value] of rows) {
    const tr = el("tr");
    tr.appendChild(el("td", "", name));
    tr.appendChild(el("td", "num", String(value)));
    table.appendChild(tr);
  }
  box.appendChild(table);
  return box;
}

export function renderMetrics(view: MetricsView): HTMLElement {
  const root = el("section", "metrics");
  root.appendChild(
    el(
      "p",
      "summary",
      `${view.rowsTotal} rows, ${view.reviewedTotal} reviewed — ` +
        `${view.removed} removed / ${view.retained} retained${view.finalized ? " (finalized)" : ""}`,
    ),
  );
  const matrices = el("div", "matrices");
  matrices.appendChild(renderConfusion(view.unsafe));
  matrices.appendChild(renderConfusion(view.undesirable));
  root.appendChild(matrices);

  const histogram = el("div", "histogram");
  histogram.appendChild(el("h3", "", "Flag counts"));
  for (const { flag, count } of view.histogram) {
    const row = el("div", "bar-row");
    row.appendChild(el("span", "bar-label", flag));
    const bar = el("span", "bar");
    bar.style.width = `${count * 12}px`;
    row.appendChild(bar);
    row.appendChild(el("span", "num", String(count)));
    histogram.appendChild(row);
  }
  root.appendChild(histogram);

  const reasons = el("div", "reasons");
  reasons.appendChild(el("h3", "", "Removal reasons"));
  for (const { reason, count } of view.reasonCounts) {
    const row = el("div", "bar-row");
    row.appendChild(el("span", "bar-label", reason));
    row.appendChild(el("span", "num", String(count)));
    reasons.appendChild(row);
  }
  root.appendChild(reasons);

  const heatmap = el("div", "heatmap");
  heatmap.appendChild(el("h3", "", "Per-row flags"));
  for (const entry of view.heatmap) {
    const row = el("div", `heat-row ${entry.removed ? "removed" : "retained"}`);
    row.appendChild(el("span", "heat-id", entry.id));
    row.appendChild(el("span", "heat-flags", entry.flags.join(", ")));
    row.appendChild(el("span", "num", String(entry.flagCount)));
    row.appendChild(el("span", "heat-reason", entry.reason ?? ""));
    heatmap.appendChild(row);
  }
  root.appendChild(heatmap);
  return root;
}

export function renderFinalize(
  view: FinalizeView | null,
  unreviewed: string[],
  onFinalize: (policy: "trust_machine" | "require_review") => void,
): HTMLElement {
  const root = el("section", "finalize");
  if (unreviewed.length) {
    root.appendChild(el("p", "error", "Finalization blocked: unreviewed rows remain."));
    const list = el("ul", "unreviewed");
    for (const id of unreviewed) {
      list.appendChild(el("li", "", id));
    }
    root.appendChild(list);
  }
  if (view) {
    root.appendChild(el("h3", "", "Purge result"));
    root.appendChild(el("p", "summary", `${view.removed} removed / ${view.retained} retained`));
    for (const { reason, count } of view.reasonCounts) {
      root.appendChild(el("div", "bar-row", `${reason}: ${count}`));
    }
    const detail = el("details");
    detail.appendChild(el("summary", "", "Removed rows"));
    for (const { id, reason } of view.removedRows) {
      detail.appendChild(el("div", "", `${id} — ${reason}`));
    }
    root.appendChild(detail);
  } else {
    const actions = el("div", "actions");
    const trust = el("button", "", "Finalize (trust machine)");
    trust.onclick = () => onFinalize("trust_machine");
    const strict = el("button", "", "Finalize (require review)");
    strict.onclick = () => onFinalize("require_review");
    actions.appendChild(trust);
    actions.appendChild(strict);
    root.appendChild(actions);
  }
  return root;
}
