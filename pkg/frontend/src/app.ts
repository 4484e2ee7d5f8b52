import { ApiClient, ApiError } from "./api.js";
import {
  buildFinalizeView,
  buildMetricsView,
  buildRowCard,
  toggleFlag,
  type FinalizeView,
  type MetricsView,
  type RowCard,
} from "./model.js";
import { renderBanner, renderFinalize, renderMetrics, renderQueue } from "./views.js";

const PAGE_SIZE = 8;

type Screen = "queue" | "metrics" | "finalize";

export class App {
  private cards: RowCard[] = [];
  private selected = 0;
  private page = 0;
  private pendingFlags: string[] = [];
  private screen: Screen = "queue";
  private filter = "flagged";
  private metrics: MetricsView | null = null;
  private finalizeResult: FinalizeView | null = null;
  private unreviewed: string[] = [];
  private banner: string | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient = new ApiClient(),
  ) {}

  async start(): Promise<void> {
    document.addEventListener("keydown", (event) => this.onKey(event));
    await this.refresh();
  }

  async refresh(): Promise<void> {
    this.banner = null;
    try {
      const rows = await this.api.listRows(this.filter);
      this.cards = rows.map(buildRowCard);
      this.selected = Math.min(this.selected, Math.max(0, this.cards.length - 1));
      this.syncPendingFromSelection();
      if (this.screen !== "queue") {
        this.metrics = buildMetricsView(await this.api.getMetrics());
      }
    } catch (err) {
      this.banner = `Review service unreachable: ${err instanceof Error ? err.message : err}`;
    }
    this.render();
  }

  private syncPendingFromSelection(): void {
    const card = this.cards[this.selected];
    this.pendingFlags = card ? [...(card.decisionFlags ?? card.machineFlags)] : [];
  }

  private select(index: number): void {
    if (!this.cards.length) return;
    this.selected = Math.max(0, Math.min(index, this.cards.length - 1));
    this.page = Math.floor(this.selected / PAGE_SIZE);
    this.syncPendingFromSelection();
    this.render();
  }

  private onKey(event: KeyboardEvent): void {
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
      return;
    }
    switch (event.key) {
      case "j":
      case "ArrowDown":
        this.select(this.selected + 1);
        break;
      case "k":
      case "ArrowUp":
        this.select(this.selected - 1);
        break;
      case "[":
        this.select((this.page - 1) * PAGE_SIZE);
        break;
      case "]":
        this.select((this.page + 1) * PAGE_SIZE);
        break;
      case "s":
        this.pendingFlags = ["safe"];
        void this.submit(this.cards[this.selected], ["safe"]);
        break;
      case "c":
        if (this.cards[this.selected]) {
          void this.submit(this.cards[this.selected], this.cards[this.selected].machineFlags);
        }
        break;
      case "Enter":
        if (this.screen === "queue" && this.cards[this.selected]) {
          void this.submit(this.cards[this.selected], this.pendingFlags);
        }
        break;
      case "m":
        void this.showMetrics();
        break;
      case "f":
        this.screen = "finalize";
        this.render();
        break;
      case "q":
        this.screen = "queue";
        this.render();
        break;
      case "r":
        void this.refresh();
        break;
    }
  }

  private async showMetrics(): Promise<void> {
    this.screen = "metrics";
    try {
      this.metrics = buildMetricsView(await this.api.getMetrics());
      this.banner = null;
    } catch (err) {
      this.banner = `Could not load metrics: ${err instanceof Error ? err.message : err}`;
    }
    this.render();
  }

  // Optimistic update: the card flips immediately and is restored from the
  // server's row payload, or rolled back on error.
  private async submit(card: RowCard | undefined, flags: string[]): Promise<void> {
    if (!card) return;
    const index = this.cards.findIndex((c) => c.id === card.id);
    const previous = this.cards[index];
    const sameAsMachine =
      flags.length === previous.machineFlags.length && flags.every((f) => previous.machineFlags.includes(f));
    this.cards[index] = {
      ...previous,
      decisionFlags: [...flags],
      decisionState: sameAsMachine ? "confirmed" : "overridden",
    };
    this.render();
    try {
      const updated = await this.api.submitReview(card.id, flags);
      this.cards[index] = buildRowCard(updated);
      this.banner = null;
      this.select(this.selected + 1);
    } catch (err) {
      this.cards[index] = previous;
      this.banner = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      this.render();
    }
  }

  private async finalize(policy: "trust_machine" | "require_review"): Promise<void> {
    try {
      this.finalizeResult = buildFinalizeView(await this.api.finalize(policy));
      this.unreviewed = [];
      this.banner = null;
    } catch (err) {
      if (err instanceof ApiError && err.code === "incomplete_review") {
        this.unreviewed = err.unreviewed;
        this.banner = err.message;
      } else {
        this.banner = err instanceof Error ? err.message : String(err);
      }
    }
    this.render();
  }

  render(): void {
    this.root.replaceChildren();
    const nav = document.createElement("nav");
    nav.textContent = `apd review — ${this.screen} (q queue · m metrics · f finalize · r refresh)`;
    this.root.appendChild(nav);
    if (this.banner) {
      this.root.appendChild(renderBanner(this.banner, () => void this.refresh()));
    }
    if (this.screen === "queue") {
      this.root.appendChild(
        renderQueue(this.cards, this.selected, this.page, PAGE_SIZE, this.pendingFlags, {
          onToggleFlag: (card, flag) => {
            this.pendingFlags = toggleFlag(this.pendingFlags, flag);
            this.render();
          },
          onSubmit: (card, flags) => void this.submit(card, flags),
          onConfirm: (card) => void this.submit(card, card.machineFlags),
        }),
      );
    } else if (this.screen === "metrics" && this.metrics) {
      this.root.appendChild(renderMetrics(this.metrics));
    } else if (this.screen === "finalize") {
      this.root.appendChild(
        renderFinalize(this.finalizeResult, this.unreviewed, (policy) => void this.finalize(policy)),
      );
    }
  }
}
