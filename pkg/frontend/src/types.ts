/** Mirrors of the review API's JSON shapes. Field names match the server
 * exactly; the UI never renames or reshapes record content. */

export interface QaOption {
  letter: string;
  text: string;
}

export interface QaRecord {
  record_id: string;
  modality: 'text' | 'image_text';
  kind: 'mcq' | 'dialogue' | 'diagnostic';
  question: string;
  thinking_trace: string | null;
  answer: string;
  options: QaOption[] | null;
  gold_letter: string | null;
  image_refs: string[];
  provenance: Record<string, unknown>;
  quality: Record<string, number>;
  status: string;
  flags: string[];
}

export interface QueueEntry {
  record: QaRecord;
  page_image_url: string | null;
  figure_urls: string[];
}

export interface QueueBatch {
  records: QueueEntry[];
  next_cursor: string | null;
}

export interface Stats {
  total: number;
  pending: number;
  accepted: number;
  rejected: number;
  edited: number;
  raw: number;
}

export type VerdictKind = 'accept' | 'reject' | 'edit';

export interface EditedFields {
  question?: string;
  thinking_trace?: string;
  answer?: string;
  gold_letter?: string;
}

export interface Verdict {
  record_id: string;
  verdict: VerdictKind;
  reviewer_id: string;
  edited_fields?: EditedFields;
}

export interface QueueFilters {
  kind?: string;
  modality?: string;
  minScore?: number;
  maxScore?: number;
}
