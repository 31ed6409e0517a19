/** Pure view-model construction.
 *
 * Every displayed field is the API payload's value, unmodified; presentation
 * state (like the collapsed-by-default thinking trace) lives alongside, never
 * in place of, the original strings.
 */

import type { QueueEntry, QaOption } from './types.js';

export interface RecordViewModel {
  recordId: string;
  kind: string;
  modality: string;
  question: string;
  thinkingTrace: string | null;
  thinkingCollapsed: boolean;
  answer: string;
  options: QaOption[];
  goldLetter: string | null;
  judgeScores: Record<string, number>;
  flags: string[];
  pageImageUrl: string | null;
  figureUrls: string[];
}

export function recordViewModel(entry: QueueEntry): RecordViewModel {
  const record = entry.record;
  return {
    recordId: record.record_id,
    kind: record.kind,
    modality: record.modality,
    question: record.question,
    thinkingTrace: record.thinking_trace,
    // traces are long; reviewers judge the question/answer first
    thinkingCollapsed: true,
    answer: record.answer,
    options: record.options ?? [],
    goldLetter: record.gold_letter,
    judgeScores: record.quality,
    flags: record.flags,
    pageImageUrl: entry.page_image_url,
    figureUrls: entry.figure_urls,
  };
}

export function optionLines(options: QaOption[]): string[] {
  return options.map((o) => `${o.letter}. ${o.text}`);
}

export function progressLabel(reviewed: number, pending: number | null): string {
  if (pending === null) return `${reviewed} reviewed`;
  return `${reviewed} reviewed · ${pending} pending`;
}
