/** Wire types of the review-service HTTP API. */

export type SessionKind = "label_verification" | "iaa";

export const CATEGORIES = [
  "Clean",
  "Formatting, Style & Errors",
  "Bibliographical & Citation References",
  "Promotional & Spam Content",
  "Contact & Identification Information",
  "Navigation & Interface Elements",
  "Technical Specifications & Metadata",
  "Legal & Administrative Content",
  "Offensive or Inappropriate Content",
] as const;

export type Category = (typeof CATEGORIES)[number];

export interface ReviewItem {
  item_id: number;
  doc_id: string;
  line_index: number;
  segment_index: number;
  text: string;
  llm_label: string;
  context_before: string[];
  context_after: string[];
}

export interface LabelTally {
  sampled: number;
  answered: number;
  low_quality: number;
  high_quality: number;
  majority: "remap_to_clean" | "keep" | "pending";
}

export interface KappaPair {
  full: number;
  binary: number;
}

export interface SessionSummary {
  session_id: string;
  kind: SessionKind;
  created_at: string;
  total_items: number;
  completed: Record<string, number>;
  warnings: string[];
  labels?: Record<string, LabelTally>;
  kappa?: Record<string, KappaPair | null>;
  replaced?: boolean;
}

export type NextResponse =
  | { done: false; item: ReviewItem }
  | { done: true; summary: SessionSummary };

export type VerdictPayload =
  | { low_quality: boolean }
  | { agrees: true }
  | { agrees: false; corrected_label: Category };
