// @vitest-environment jsdom
/** DOM rendering invariants: server order is preserved verbatim, the rating
 * widget allows exactly one choice, and submission waits for all ratings. */

import { describe, expect, it } from "vitest";

import {
  renderErrorBanner,
  renderQuestionScreen,
  renderRatingWidget,
  renderResultCards,
} from "../src/render.js";
import type { QuestionCard, ScanResultItem } from "../src/types.js";

/** Deterministic 32-bit PRNG so the 20 random payloads are reproducible. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function randomResults(rand: () => number, n: number): ScanResultItem[] {
  const ids = [...Array(50).keys()].map((i) => `slide-${String(i).padStart(2, "0")}`);
  // shuffle so payload order is NOT sorted by id or by distance
  for (let i = ids.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [ids[i], ids[j]] = [ids[j], ids[i]];
  }
  return ids.slice(0, n).map((slide_id) => ({
    slide_id,
    distance: Math.floor(rand() * 256),
    min_distances: [],
    primary_site: rand() < 0.5 ? "site alpha" : null,
    primary_diagnosis: "class x",
    thumbnail: `/slides/${slide_id}/thumbnail`,
  }));
}

const resolve = (p: string) => p;

describe("result card order fidelity", () => {
  it("renders cards in exact payload order for 20 randomized queries", () => {
    const rand = mulberry32(2026);
    for (let query = 0; query < 20; query++) {
      const results = randomResults(rand, 1 + Math.floor(rand() * 10));
      const container = document.createElement("div");
      renderResultCards(container, results, resolve);
      const rendered = [...container.querySelectorAll<HTMLElement>(".result-card")];
      expect(rendered.map((c) => c.dataset.slideId)).toEqual(
        results.map((r) => r.slide_id),
      );
      expect(
        rendered.map((c) => c.querySelector(".card-distance")?.textContent),
      ).toEqual(results.map((r) => `distance ${r.distance}`));
    }
  });

  it("never truncates or drops results", () => {
    const rand = mulberry32(7);
    const results = randomResults(rand, 10);
    const container = document.createElement("div");
    renderResultCards(container, results, resolve);
    expect(container.querySelectorAll(".result-card").length).toBe(10);
  });
});

describe("error banner", () => {
  it("shows the message and no fabricated cards", () => {
    const container = document.createElement("div");
    renderErrorBanner(container, "service down");
    expect(container.querySelector(".error-banner")?.textContent).toBe("service down");
    expect(container.querySelectorAll(".result-card").length).toBe(0);
  });
});

describe("rating widget", () => {
  it("keeps exactly one option active", () => {
    const widget = renderRatingWidget();
    document.body.appendChild(widget.root);
    const options = [...widget.root.querySelectorAll<HTMLButtonElement>(".rating-option")];
    expect(options.length).toBe(5);
    options[1].click();
    options[4].click();
    const active = options.filter((o) => o.classList.contains("active"));
    expect(active.length).toBe(1);
    expect(active[0].dataset.rating).toBe("Great");
    expect(widget.selected()).toBe("Great");
  });
});

function sampleQuestion(): {
  question_index: number;
  n_questions: number;
  query: { slide_id: string; thumbnail: string };
  results: QuestionCard[];
} {
  return {
    question_index: 0,
    n_questions: 3,
    query: { slide_id: "q-slide", thumbnail: "/slides/q-slide/thumbnail" },
    results: [2, 0, 1].map((trueless, position) => ({
      position,
      slide_id: `r-${trueless}`,
      distance: 10 + trueless,
      primary_site: null,
      primary_diagnosis: null,
      thumbnail: `/slides/r-${trueless}/thumbnail`,
    })),
  };
}

describe("question screen", () => {
  it("shows cards in server order and never reveals rank", () => {
    const container = document.createElement("div");
    const question = sampleQuestion();
    renderQuestionScreen(container, question, resolve, () => {});
    const cards = [...container.querySelectorAll<HTMLElement>(".question-card")];
    expect(cards.map((c) => c.dataset.slideId)).toEqual(["r-2", "r-0", "r-1"]);
    expect(container.textContent).not.toMatch(/rank/i);
  });

  it("blocks submission until every result is rated", () => {
    const container = document.createElement("div");
    const submissions: Array<Map<number, string>> = [];
    const view = renderQuestionScreen(container, sampleQuestion(), resolve, (r) =>
      submissions.push(r),
    );
    expect(view.submitButton.disabled).toBe(true);
    const cards = [...container.querySelectorAll<HTMLElement>(".question-card")];
    const rate = (card: HTMLElement, rating: string) =>
      card
        .querySelector<HTMLButtonElement>(`.rating-option[data-rating="${rating}"]`)!
        .click();

    rate(cards[0], "Great");
    rate(cards[1], "Bad");
    expect(view.submitButton.disabled).toBe(true);
    view.submitButton.click();
    expect(submissions.length).toBe(0);

    rate(cards[2], "Neutral");
    expect(view.submitButton.disabled).toBe(false);
    view.submitButton.click();
    expect(submissions.length).toBe(1);
    expect(submissions[0].get(0)).toBe("Great");
    expect(submissions[0].get(2)).toBe("Neutral");
    // the button disables itself after submitting
    expect(view.submitButton.disabled).toBe(true);
  });

  it("re-rating before submit replaces the earlier choice", () => {
    const container = document.createElement("div");
    const view = renderQuestionScreen(container, sampleQuestion(), resolve, () => {});
    const card = container.querySelector<HTMLElement>(".question-card")!;
    card.querySelector<HTMLButtonElement>('.rating-option[data-rating="Bad"]')!.click();
    card.querySelector<HTMLButtonElement>('.rating-option[data-rating="Good"]')!.click();
    expect(view.ratings().get(0)).toBe("Good");
  });
});
