import { ApiError, ReviewApi } from "./api";
import type {
  Category,
  NextResponse,
  ReviewItem,
  SessionSummary,
  VerdictPayload,
} from "./types";
import { CATEGORIES } from "./types";

export type View = "dashboard" | "item" | "done" | "fatal";

export interface VerdictForm {
  lowQuality: boolean | null; // verification sessions
  agrees: boolean | null; // agreement sessions
  correctedLabel: Category | null;
}

export interface ViewState {
  view: View;
  annotator: string;
  sessions: SessionSummary[];
  session: SessionSummary | null;
  item: ReviewItem | null;
  form: VerdictForm;
  pendingSubmit: boolean;
  /** hide machine labels in agreement sessions; the annotator picks a
   * category and agreement is derived from it (anchoring-bias guard) */
  blind: boolean;
  /** inline, recoverable problem (form preserved, retry possible) */
  error: string | null;
  /** unrecoverable problem; renders the error screen */
  fatal: string | null;
}

const EMPTY_FORM: VerdictForm = {
  lowQuality: null,
  agrees: null,
  correctedLabel: null,
};

function freshState(annotator: string, blind = false): ViewState {
  return {
    view: "dashboard",
    annotator,
    sessions: [],
    session: null,
    item: null,
    form: { ...EMPTY_FORM },
    pendingSubmit: false,
    blind,
    error: null,
    fatal: null,
  };
}

/** Drives the review UI: every displayed number comes from the last service
 * response; navigation is blocked while a verdict is unsaved or in flight. */
export class SessionController {
  state: ViewState;
  private listeners: Array<(state: ViewState) => void> = [];

  constructor(
    private api: ReviewApi,
    annotator = "",
    blind = false,
  ) {
    this.state = freshState(annotator, blind);
  }

  onChange(listener: (state: ViewState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  setAnnotator(annotator: string): void {
    this.state.annotator = annotator;
    this.emit();
  }

  setBlind(blind: boolean): void {
    this.state.blind = blind;
    this.emit();
  }

  blindActive(): boolean {
    return this.state.blind && this.sessionKind() === "iaa";
  }

  formDirty(): boolean {
    const { lowQuality, agrees, correctedLabel } = this.state.form;
    return lowQuality !== null || agrees !== null || correctedLabel !== null;
  }

  discardForm(): void {
    this.state.form = { ...EMPTY_FORM };
    this.state.error = null;
    this.emit();
  }

  /** Guard shared by all navigation: refuse to drop unsaved work. */
  private navigationBlocked(): boolean {
    if (this.state.pendingSubmit) {
      this.state.error = "a verdict is still being saved";
      this.emit();
      return true;
    }
    if (this.state.view === "item" && this.formDirty()) {
      this.state.error = "unsaved verdict: submit it or discard it first";
      this.emit();
      return true;
    }
    return false;
  }

  async loadDashboard(): Promise<void> {
    if (this.navigationBlocked()) return;
    try {
      const { sessions } = await this.api.listSessions();
      this.state = { ...freshState(this.state.annotator, this.state.blind), sessions };
    } catch (error) {
      this.state.error = describe(error);
    }
    this.emit();
  }

  async openSession(sessionId: string): Promise<void> {
    if (this.navigationBlocked()) return;
    if (!this.state.annotator) {
      this.state.error = "set an annotator id first";
      this.emit();
      return;
    }
    try {
      this.state.session = await this.api.summary(sessionId);
      await this.fetchNext();
    } catch (error) {
      this.applyFailure(error);
      this.emit();
    }
  }

  /** Pull the next unanswered item (or the done state) for this annotator. */
  async fetchNext(): Promise<void> {
    const session = this.state.session;
    if (!session) return;
    try {
      const next: NextResponse = await this.api.nextItem(
        session.session_id,
        this.state.annotator,
      );
      this.state.error = null;
      if (next.done) {
        this.state.view = "done";
        this.state.item = null;
        this.state.session = next.summary;
      } else {
        this.state.view = "item";
        this.state.item = next.item;
        this.state.form = { ...EMPTY_FORM };
      }
    } catch (error) {
      this.applyFailure(error);
    }
    this.emit();
  }

  setLowQuality(lowQuality: boolean): void {
    if (this.sessionKind() !== "label_verification" || this.state.pendingSubmit) return;
    this.state.form.lowQuality = lowQuality;
    this.emit();
  }

  setAgrees(agrees: boolean): void {
    if (this.sessionKind() !== "iaa" || this.state.pendingSubmit) return;
    this.state.form.agrees = agrees;
    if (agrees) this.state.form.correctedLabel = null;
    this.emit();
  }

  setCorrectedLabel(label: Category): void {
    // live once "disagree" is selected, or always under blind mode
    const allowed = this.state.form.agrees === false || this.blindActive();
    if (!allowed || this.state.pendingSubmit) return;
    this.state.form.correctedLabel = label;
    this.emit();
  }

  sessionKind(): string | null {
    return this.state.session?.kind ?? null;
  }

  canSubmit(): boolean {
    if (this.state.view !== "item" || this.state.pendingSubmit) return false;
    const form = this.state.form;
    if (this.sessionKind() === "label_verification") return form.lowQuality !== null;
    if (this.blindActive()) return form.correctedLabel !== null;
    if (form.agrees === true) return true;
    return form.agrees === false && form.correctedLabel !== null;
  }

  private buildPayload(): VerdictPayload {
    const form = this.state.form;
    if (this.sessionKind() === "label_verification") {
      return { low_quality: form.lowQuality as boolean };
    }
    if (this.blindActive()) {
      // agreement is derived from the annotator's own pick
      if (form.correctedLabel === this.state.item?.llm_label) return { agrees: true };
      return { agrees: false, corrected_label: form.correctedLabel as Category };
    }
    if (form.agrees) return { agrees: true };
    return { agrees: false, corrected_label: form.correctedLabel as Category };
  }

  /** Submit the current form; advance only after the service acknowledges. */
  async submit(): Promise<void> {
    if (!this.canSubmit() || !this.state.session || !this.state.item) return;
    this.state.pendingSubmit = true;
    this.state.error = null;
    this.emit();
    try {
      const summary = await this.api.submitVerdict(
        this.state.session.session_id,
        this.state.annotator,
        this.state.item.item_id,
        this.buildPayload(),
      );
      this.state.session = summary;
      this.state.pendingSubmit = false;
      this.state.form = { ...EMPTY_FORM };
      await this.fetchNext();
      return;
    } catch (error) {
      // rejected or unreachable: keep the form for correction/retry
      this.state.pendingSubmit = false;
      this.applyFailure(error);
      this.emit();
    }
  }

  /** Map a key press onto the form/submit actions (keyboard-only flow). */
  handleKey(key: string): void {
    if (this.state.view !== "item") return;
    if (key === "Enter") {
      void this.submit();
      return;
    }
    if (this.sessionKind() === "label_verification") {
      if (key === "h") this.setLowQuality(false);
      if (key === "l") this.setLowQuality(true);
      return;
    }
    if (!this.blindActive()) {
      if (key === "a") this.setAgrees(true);
      if (key === "d") this.setAgrees(false);
    }
    const digit = Number.parseInt(key, 10);
    if (digit >= 1 && digit <= CATEGORIES.length) {
      this.setCorrectedLabel(CATEGORIES[digit - 1]);
    }
  }

  retry(): Promise<void> {
    if (this.state.view === "dashboard") return this.loadDashboard();
    return this.fetchNext();
  }

  progress(): { answered: number; total: number } {
    const session = this.state.session;
    if (!session) return { answered: 0, total: 0 };
    return {
      answered: session.completed[this.state.annotator] ?? 0,
      total: session.total_items,
    };
  }

  private applyFailure(error: unknown): void {
    if (error instanceof ApiError && error.status === 404) {
      this.state.view = "fatal";
      this.state.fatal = error.message;
      this.state.item = null;
      return;
    }
    this.state.error = describe(error);
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return error.message;
  if (error instanceof Error) return `service unreachable: ${error.message}`;
  return String(error);
}
