/** Page wiring: slide browser with scan/patch search, and rating sessions. */

import { ApiClient, ApiError } from "./api.js";
import {
  renderErrorBanner,
  renderPatchMatches,
  renderQuestionScreen,
  renderResultCards,
  renderSessionDone,
  renderSlidePicker,
} from "./render.js";
import type { NextQuestion, Rating, ScanResultItem, SlideSummary } from "./types.js";

/** Client-side session driver.
 *
 * Tracks which (question, position) pairs were already submitted and refuses
 * to send them again, so every rating is posted exactly once per session even
 * if the view fires twice.
 */
export class SessionController {
  private submitted = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
    readonly raterRole: "expert" | "non-expert" = "non-expert",
  ) {}

  next(): Promise<NextQuestion> {
    return this.api.nextQuestion(this.sessionId);
  }

  alreadyAnswered(questionIndex: number, position: number): boolean {
    return this.submitted.has(`${questionIndex}:${position}`);
  }

  /** Post one rating; returns false (and does not POST) on resubmission. */
  async submitRating(
    questionIndex: number,
    position: number,
    rating: Rating,
  ): Promise<boolean> {
    const key = `${questionIndex}:${position}`;
    if (this.submitted.has(key)) {
      return false;
    }
    await this.api.postFeedback({
      session_id: this.sessionId,
      question_index: questionIndex,
      position,
      rating,
      rater_role: this.raterRole,
    });
    this.submitted.add(key);
    return true;
  }

  async submitQuestion(
    questionIndex: number,
    ratings: Map<number, Rating>,
  ): Promise<number> {
    let posted = 0;
    for (const [position, rating] of ratings) {
      if (await this.submitRating(questionIndex, position, rating)) {
        posted += 1;
      }
    }
    return posted;
  }
}

interface Elements {
  banner: HTMLElement;
  picker: HTMLElement;
  controls: HTMLElement;
  results: HTMLElement;
  detail: HTMLElement;
  session: HTMLElement;
}

function grab(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  return err instanceof Error ? err.message : String(err);
}

export class App {
  private slides: SlideSummary[] = [];
  private query: SlideSummary | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly ui: Elements,
  ) {}

  async start(): Promise<void> {
    try {
      this.slides = await this.api.listSlides();
    } catch (err) {
      renderErrorBanner(this.ui.banner, `service unreachable: ${describeError(err)}`);
      return;
    }
    renderSlidePicker(this.ui.picker, this.slides, (p) => this.api.resolve(p), (s) => {
      this.query = s;
      void this.runSearch();
    });
    this.renderControls();
  }

  private renderControls(): void {
    const root = this.ui.controls;
    root.replaceChildren();
    const mode = document.createElement("select");
    mode.id = "mode";
    for (const value of ["horizontal", "vertical"]) {
      const opt = document.createElement("option");
      opt.value = value;
      opt.textContent = value;
      mode.appendChild(opt);
    }
    const site = document.createElement("input");
    site.id = "site";
    site.placeholder = "site (vertical mode)";
    const k = document.createElement("input");
    k.id = "k";
    k.type = "number";
    k.value = "10";
    const run = document.createElement("button");
    run.textContent = "search";
    run.addEventListener("click", () => void this.runSearch());
    const sessionButton = document.createElement("button");
    sessionButton.textContent = "start rating session";
    sessionButton.addEventListener("click", () => void this.runSession());
    root.append(mode, site, k, run, sessionButton);
  }

  private async runSearch(): Promise<void> {
    if (!this.query) return;
    const mode = (document.getElementById("mode") as HTMLSelectElement).value as
      | "horizontal"
      | "vertical";
    const site = (document.getElementById("site") as HTMLInputElement).value || undefined;
    const k = Number((document.getElementById("k") as HTMLInputElement).value) || 10;
    try {
      const response = await this.api.scanSearch({
        slide_id: this.query.slide_id,
        mode,
        site,
        k,
      });
      this.ui.banner.replaceChildren();
      renderResultCards(this.ui.results, response.results, (p) => this.api.resolve(p), (r) =>
        void this.showPatchDetail(r),
      );
    } catch (err) {
      renderErrorBanner(this.ui.banner, describeError(err));
      this.ui.results.replaceChildren();
    }
  }

  /** Drill into patch-level matches of a clicked result slide. */
  private async showPatchDetail(result: ScanResultItem): Promise<void> {
    const summary = this.slides.find((s) => s.slide_id === result.slide_id);
    if (!summary || summary.patches.length === 0) return;
    const patch = summary.patches[0];
    try {
      const response = await this.api.patchSearch({
        slide_id: result.slide_id,
        grid_x: patch.grid_x,
        grid_y: patch.grid_y,
        k: 10,
      });
      renderPatchMatches(this.ui.detail, response.results, (p) => this.api.resolve(p));
    } catch (err) {
      renderErrorBanner(this.ui.banner, describeError(err));
    }
  }

  private async runSession(nQuestions = 48): Promise<void> {
    try {
      const info = await this.api.createSession(nQuestions, Date.now() % 100000);
      const controller = new SessionController(this.api, info.session_id);
      await this.sessionLoop(controller);
    } catch (err) {
      renderErrorBanner(this.ui.banner, describeError(err));
    }
  }

  private async sessionLoop(controller: SessionController): Promise<void> {
    const question = await controller.next();
    if (question.done) {
      renderSessionDone(this.ui.session, question.n_questions);
      return;
    }
    renderQuestionScreen(
      this.ui.session,
      {
        question_index: question.question_index!,
        n_questions: question.n_questions,
        query: question.query!,
        results: question.results!,
      },
      (p) => this.api.resolve(p),
      (ratings) =>
        void controller
          .submitQuestion(question.question_index!, ratings)
          .then(() => this.sessionLoop(controller)),
    );
  }
}

export function boot(baseUrl = ""): void {
  const api = new ApiClient(baseUrl);
  const app = new App(api, {
    banner: grab("banner"),
    picker: grab("picker"),
    controls: grab("controls"),
    results: grab("results"),
    detail: grab("detail"),
    session: grab("session"),
  });
  void app.start();
}
