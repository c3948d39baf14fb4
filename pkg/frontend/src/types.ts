/** Payload shapes of the search service's HTTP API. */

export type Rating = "VeryBad" | "Bad" | "Neutral" | "Good" | "Great";

export const RATINGS: Rating[] = ["VeryBad", "Bad", "Neutral", "Good", "Great"];

/** Red-to-green ramp, one color per rating. */
export const RATING_COLORS: Record<Rating, string> = {
  VeryBad: "#c0392b",
  Bad: "#e67e22",
  Neutral: "#d4ac0d",
  Good: "#58a55c",
  Great: "#1e8449",
};

export interface PatchKey {
  grid_x: number;
  grid_y: number;
}

export interface SlideSummary {
  slide_id: string;
  primary_site: string | null;
  primary_diagnosis: string | null;
  n_barcodes: number;
  patches: PatchKey[];
  thumbnail: string;
}

export interface ScanResultItem {
  slide_id: string;
  distance: number;
  min_distances: number[];
  primary_site: string | null;
  primary_diagnosis: string | null;
  thumbnail: string;
}

export interface ScanResponse {
  query_slide_id: string;
  mode: string;
  site: string | null;
  results: ScanResultItem[];
}

export interface ScanRequest {
  slide_id: string;
  mode: "horizontal" | "vertical";
  site?: string;
  k: number;
  fraction?: number;
  seed?: number;
}

export interface PatchResultItem {
  slide_id: string;
  grid_x: number;
  grid_y: number;
  distance: number;
  primary_site: string | null;
  primary_diagnosis: string | null;
  thumbnail: string;
}

export interface PatchResponse {
  results: PatchResultItem[];
}

export interface PatchRequest {
  slide_id: string;
  grid_x: number;
  grid_y: number;
  k: number;
  mode?: "horizontal" | "vertical";
  site?: string;
}

export interface SessionInfo {
  session_id: string;
  n_questions: number;
  results_per_question: number;
}

export interface QuestionCard {
  position: number;
  slide_id: string;
  distance: number;
  primary_site: string | null;
  primary_diagnosis: string | null;
  thumbnail: string;
}

export interface NextQuestion {
  done: boolean;
  n_questions: number;
  question_index?: number;
  n_answered?: number;
  query?: { slide_id: string; thumbnail: string };
  results?: QuestionCard[];
}

export interface FeedbackPost {
  session_id: string;
  question_index: number;
  position: number;
  rating: Rating;
  rater_role: "expert" | "non-expert";
}

export interface FeedbackRecord {
  session_id: string;
  query_ref: string;
  result_ref: string;
  result_rank: number;
  rating: Rating;
  rater_role: string;
  timestamp: string;
  distance: number;
}

export interface FeedbackSummary {
  n_records: number;
  records: FeedbackRecord[];
  per_rank_rating_counts: Record<string, Record<Rating, number>>;
  median_distance_by_rating: Record<Rating, number | null>;
  rating_distance_spearman: number | null;
}
