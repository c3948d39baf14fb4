// @vitest-environment node
/** Client-side session driver: every rating posts exactly once. */

import { describe, expect, it } from "vitest";

import type { ApiClient } from "../src/api.js";
import { SessionController } from "../src/app.js";
import type { FeedbackPost } from "../src/types.js";

class FakeApi {
  posts: FeedbackPost[] = [];

  async postFeedback(body: FeedbackPost) {
    this.posts.push(body);
    return { status: "recorded", result_rank: body.position + 1 };
  }

  async nextQuestion() {
    return { done: true, n_questions: 0 };
  }
}

function controller(fake: FakeApi): SessionController {
  return new SessionController(fake as unknown as ApiClient, "session-1", "expert");
}

describe("SessionController", () => {
  it("posts a fresh rating and records it", async () => {
    const fake = new FakeApi();
    const ctl = controller(fake);
    expect(await ctl.submitRating(0, 1, "Great")).toBe(true);
    expect(fake.posts.length).toBe(1);
    expect(fake.posts[0]).toMatchObject({
      session_id: "session-1",
      question_index: 0,
      position: 1,
      rating: "Great",
      rater_role: "expert",
    });
  });

  it("rejects resubmission of an answered position without posting", async () => {
    const fake = new FakeApi();
    const ctl = controller(fake);
    expect(await ctl.submitRating(2, 0, "Bad")).toBe(true);
    expect(await ctl.submitRating(2, 0, "Great")).toBe(false);
    expect(fake.posts.length).toBe(1);
    expect(ctl.alreadyAnswered(2, 0)).toBe(true);
    expect(ctl.alreadyAnswered(2, 1)).toBe(false);
  });

  it("submitQuestion posts each position once even when repeated", async () => {
    const fake = new FakeApi();
    const ctl = controller(fake);
    const ratings = new Map([
      [0, "Great"],
      [1, "Neutral"],
      [2, "VeryBad"],
    ] as const);
    expect(await ctl.submitQuestion(5, new Map(ratings))).toBe(3);
    expect(await ctl.submitQuestion(5, new Map(ratings))).toBe(0);
    expect(fake.posts.length).toBe(3);
  });
});
