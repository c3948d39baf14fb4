/** Pure DOM builders. Server result arrays are rendered in the order
 * received, never sorted, filtered, or truncated client-side. */

import type {
  PatchResultItem,
  QuestionCard,
  Rating,
  ScanResultItem,
  SlideSummary,
} from "./types.js";
import { RATINGS, RATING_COLORS } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function labelLine(site: string | null, diagnosis: string | null): string {
  const parts = [];
  if (diagnosis) parts.push(diagnosis);
  if (site) parts.push(site);
  return parts.join(" · ") || "unlabeled";
}

export function renderErrorBanner(container: HTMLElement, message: string): void {
  container.replaceChildren();
  const banner = el("div", "error-banner", message);
  banner.setAttribute("role", "alert");
  container.appendChild(banner);
}

export function renderSlidePicker(
  container: HTMLElement,
  slides: SlideSummary[],
  resolve: (path: string) => string,
  onPick: (slide: SlideSummary) => void,
): void {
  container.replaceChildren();
  for (const slide of slides) {
    const card = el("button", "slide-tile");
    card.type = "button";
    card.dataset.slideId = slide.slide_id;
    const img = el("img");
    img.src = resolve(slide.thumbnail);
    img.alt = slide.slide_id;
    card.appendChild(img);
    card.appendChild(el("div", "tile-id", slide.slide_id));
    card.appendChild(
      el("div", "tile-labels", labelLine(slide.primary_site, slide.primary_diagnosis)),
    );
    card.addEventListener("click", () => onPick(slide));
    container.appendChild(card);
  }
}

export function renderResultCards(
  container: HTMLElement,
  results: ScanResultItem[],
  resolve: (path: string) => string,
  onSelect?: (result: ScanResultItem) => void,
): void {
  container.replaceChildren();
  results.forEach((result, i) => {
    const card = el("div", "result-card");
    card.dataset.slideId = result.slide_id;
    card.dataset.index = String(i);
    const img = el("img");
    img.src = resolve(result.thumbnail);
    img.alt = result.slide_id;
    card.appendChild(img);
    card.appendChild(el("div", "card-id", result.slide_id));
    card.appendChild(el("div", "card-distance", `distance ${result.distance}`));
    card.appendChild(
      el("div", "card-labels", labelLine(result.primary_site, result.primary_diagnosis)),
    );
    if (onSelect) {
      card.classList.add("clickable");
      card.addEventListener("click", () => onSelect(result));
    }
    container.appendChild(card);
  });
}

export function renderPatchMatches(
  container: HTMLElement,
  results: PatchResultItem[],
  resolve: (path: string) => string,
): void {
  container.replaceChildren();
  for (const match of results) {
    const row = el("div", "patch-row");
    row.dataset.slideId = match.slide_id;
    const img = el("img");
    img.src = resolve(match.thumbnail);
    img.alt = match.slide_id;
    row.appendChild(img);
    row.appendChild(
      el(
        "div",
        "patch-text",
        `${match.slide_id} (${match.grid_x}, ${match.grid_y}) — distance ${match.distance}`,
      ),
    );
    container.appendChild(row);
  }
}

export interface RatingWidget {
  root: HTMLElement;
  selected: () => Rating | null;
}

/** Five-option rating strip; exactly one option can be active. */
export function renderRatingWidget(onChange?: (rating: Rating) => void): RatingWidget {
  const root = el("div", "rating-widget");
  let selected: Rating | null = null;
  for (const rating of RATINGS) {
    const button = el("button", "rating-option", rating);
    button.type = "button";
    button.dataset.rating = rating;
    button.style.setProperty("--rating-color", RATING_COLORS[rating]);
    button.addEventListener("click", () => {
      selected = rating;
      for (const other of root.querySelectorAll(".rating-option")) {
        other.classList.toggle("active", other === button);
      }
      onChange?.(rating);
    });
    root.appendChild(button);
  }
  return { root, selected: () => selected };
}

export interface QuestionView {
  root: HTMLElement;
  submitButton: HTMLButtonElement;
  ratings: () => Map<number, Rating>;
}

/** One feedback question: query image plus the server-shuffled result cards,
 * each with a rating widget. Rank is never displayed. Submission stays
 * disabled until every result is rated. */
export function renderQuestionScreen(
  container: HTMLElement,
  question: {
    question_index: number;
    n_questions: number;
    query: { slide_id: string; thumbnail: string };
    results: QuestionCard[];
  },
  resolve: (path: string) => string,
  onSubmit: (ratings: Map<number, Rating>) => void,
): QuestionView {
  container.replaceChildren();
  const root = el("div", "question-screen");
  root.appendChild(
    el(
      "div",
      "question-progress",
      `question ${question.question_index + 1} of ${question.n_questions}`,
    ),
  );

  const queryPane = el("div", "question-query");
  const queryImg = el("img");
  queryImg.src = resolve(question.query.thumbnail);
  queryImg.alt = question.query.slide_id;
  queryPane.appendChild(queryImg);
  queryPane.appendChild(el("div", undefined, `query: ${question.query.slide_id}`));
  root.appendChild(queryPane);

  const grid = el("div", "question-results");
  const ratings = new Map<number, Rating>();
  const submitButton = el("button", "submit-question", "submit ratings");
  submitButton.type = "button";
  submitButton.disabled = true;

  for (const card of question.results) {
    const pane = el("div", "question-card");
    pane.dataset.slideId = card.slide_id;
    pane.dataset.position = String(card.position);
    const img = el("img");
    img.src = resolve(card.thumbnail);
    img.alt = card.slide_id;
    pane.appendChild(img);
    const widget = renderRatingWidget((rating) => {
      ratings.set(card.position, rating);
      submitButton.disabled = ratings.size < question.results.length;
    });
    pane.appendChild(widget.root);
    grid.appendChild(pane);
  }
  root.appendChild(grid);

  submitButton.addEventListener("click", () => {
    if (ratings.size === question.results.length) {
      submitButton.disabled = true;
      onSubmit(new Map(ratings));
    }
  });
  root.appendChild(submitButton);
  container.appendChild(root);
  return { root, submitButton, ratings: () => new Map(ratings) };
}

export function renderSessionDone(container: HTMLElement, nQuestions: number): void {
  container.replaceChildren();
  container.appendChild(
    el("div", "session-done", `session complete — all ${nQuestions} questions answered`),
  );
}
