// @vitest-environment node
/** End-to-end feedback round-trip against the real service: a scripted
 * 48-question session posts 144 ratings chosen by displayed distance, and
 * the summary must echo them exactly with a negative rating-vs-distance
 * correlation. */

import { describe, expect, inject, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController } from "../src/app.js";
import type { QuestionCard, Rating } from "../src/types.js";

const api = () => new ApiClient(inject("serviceUrl"));

/** Nearest result gets Great, middle Neutral, farthest VeryBad. */
function ratingsByDistance(cards: QuestionCard[]): Map<number, Rating> {
  const order = [...cards].sort((a, b) => a.distance - b.distance);
  const scale: Rating[] = ["Great", "Neutral", "VeryBad"];
  const out = new Map<number, Rating>();
  order.forEach((card, i) => out.set(card.position, scale[i]));
  return out;
}

describe("scripted 48-question session", () => {
  it("posts 144 records and the summary reproduces them exactly", async () => {
    const client = api();
    const info = await client.createSession(48, 123);
    expect(info.n_questions).toBe(48);
    expect(info.results_per_question).toBe(3);

    const before = await client.feedbackSummary();
    const controller = new SessionController(client, info.session_id, "expert");

    const posted: Array<{ query: string; result: string; rating: Rating; distance: number }> =
      [];
    for (let step = 0; step < 48; step++) {
      const question = await controller.next();
      expect(question.done).toBe(false);
      expect(question.question_index).toBe(step);
      const cards = question.results!;
      expect(cards.length).toBe(3);
      const ratings = ratingsByDistance(cards);
      for (const card of cards) {
        posted.push({
          query: question.query!.slide_id,
          result: card.slide_id,
          rating: ratings.get(card.position)!,
          distance: card.distance,
        });
      }
      expect(await controller.submitQuestion(step, ratings)).toBe(3);
    }
    expect(posted.length).toBe(144);

    const finished = await controller.next();
    expect(finished.done).toBe(true);

    const summary = await client.feedbackSummary();
    const mine = summary.records.filter((r) => r.session_id === info.session_id);
    expect(summary.n_records).toBe(before.n_records + 144);
    expect(mine.length).toBe(144);

    const key = (r: { query: string; result: string; rating: string; distance: number }) =>
      `${r.query}|${r.result}|${r.rating}|${r.distance}`;
    const echoed = mine.map((r) =>
      key({ query: r.query_ref, result: r.result_ref, rating: r.rating, distance: r.distance }),
    );
    expect(echoed.sort()).toEqual(posted.map(key).sort());

    // each question contributed exactly ranks 1..3
    const rankCounts = new Map<number, number>();
    for (const r of mine) rankCounts.set(r.result_rank, (rankCounts.get(r.result_rank) ?? 0) + 1);
    expect(rankCounts.get(1)).toBe(48);
    expect(rankCounts.get(2)).toBe(48);
    expect(rankCounts.get(3)).toBe(48);
  });

  it("rating-by-closeness yields a negative rating-vs-distance correlation", async () => {
    const summary = await api().feedbackSummary();
    expect(summary.rating_distance_spearman).not.toBeNull();
    expect(summary.rating_distance_spearman!).toBeLessThan(0);
    const great = summary.median_distance_by_rating.Great;
    const veryBad = summary.median_distance_by_rating.VeryBad;
    expect(great).not.toBeNull();
    expect(veryBad).not.toBeNull();
    expect(great!).toBeLessThan(veryBad!);
  });

  it("the server also rejects duplicate ratings (409)", async () => {
    const client = api();
    const info = await client.createSession(1, 77);
    await client.postFeedback({
      session_id: info.session_id,
      question_index: 0,
      position: 0,
      rating: "Good",
      rater_role: "non-expert",
    });
    await expect(
      client.postFeedback({
        session_id: info.session_id,
        question_index: 0,
        position: 0,
        rating: "Bad",
        rater_role: "non-expert",
      }),
    ).rejects.toMatchObject({ status: 409 });
  });
});

describe("search pass-through", () => {
  it("scan results arrive ranked with distances and labels", async () => {
    const client = api();
    const slides = await client.listSlides();
    expect(slides.length).toBeGreaterThanOrEqual(4);
    const response = await client.scanSearch({
      slide_id: slides[0].slide_id,
      mode: "horizontal",
      k: 3,
    });
    expect(response.results.length).toBe(3);
    const distances = response.results.map((r) => r.distance);
    expect([...distances].sort((a, b) => a - b)).toEqual(distances);
    expect(response.results.every((r) => r.slide_id !== slides[0].slide_id)).toBe(true);
  });

  it("patch search works from the advertised patch keys", async () => {
    const client = api();
    const slides = await client.listSlides();
    const slide = slides[0];
    expect(slide.patches.length).toBeGreaterThan(0);
    const response = await client.patchSearch({
      slide_id: slide.slide_id,
      grid_x: slide.patches[0].grid_x,
      grid_y: slide.patches[0].grid_y,
      k: 5,
    });
    expect(response.results.length).toBe(5);
    expect(response.results[0].distance).toBe(0);
  });
});
