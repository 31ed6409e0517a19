/** In-memory double of the review API, faithful to the server contract:
 * pending records sorted by record_id with cursor pagination, accept/reject/
 * edit verdicts with latest-wins supersession, 404 for unknown records, 422
 * for edits that violate record invariants, and /api/stats counters. */

import type { EditedFields, QaRecord, QueueEntry, Verdict } from '../src/types.js';
import type { FetchLike } from '../src/api.js';

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export function makeRecord(i: number, overrides: Partial<QaRecord> = {}): QaRecord {
  return {
    record_id: `rec${String(i).padStart(3, '0')}`,
    modality: 'text',
    kind: 'dialogue',
    question: `Question ${i}?`,
    thinking_trace: null,
    answer: `Answer ${i}`,
    options: null,
    gold_letter: null,
    image_refs: [],
    provenance: { doc_id: 'd', page_index: 0 },
    quality: {},
    status: 'cleaned',
    flags: [],
    ...overrides,
  };
}

export class FakeServer {
  records = new Map<string, QaRecord>();
  verdictLog: Verdict[] = [];
  failNextRequests = 0;

  constructor(records: QaRecord[]) {
    for (const r of records) this.records.set(r.record_id, r);
  }

  private validateEdit(record: QaRecord, edited: EditedFields | undefined): string | null {
    if (!edited || Object.keys(edited).length === 0) {
      return 'edit verdict with empty edited_fields';
    }
    const trial = { ...record, ...edited };
    if (!trial.question || !trial.question.trim()) return 'empty question';
    if (!trial.answer || !trial.answer.trim()) return 'empty answer';
    if (trial.options && trial.gold_letter) {
      const letters = trial.options.map((o) => o.letter);
      if (!letters.includes(trial.gold_letter)) {
        return `gold letter '${trial.gold_letter}' not among options`;
      }
    }
    return null;
  }

  private pending(
    kind: string | null,
    modality: string | null,
    minScore: number | null,
    maxScore: number | null,
  ): QaRecord[] {
    const scoreOk = (r: QaRecord): boolean => {
      if (minScore === null && maxScore === null) return true;
      const score = r.quality['groundedness_score'];
      if (score === undefined) return false;
      return (minScore === null || score >= minScore) && (maxScore === null || score <= maxScore);
    };
    return [...this.records.values()]
      .filter(
        (r) =>
          r.status === 'cleaned' &&
          (!kind || r.kind === kind) &&
          (!modality || r.modality === modality) &&
          scoreOk(r),
      )
      .sort((a, b) => (a.record_id < b.record_id ? -1 : 1));
  }

  stats() {
    const counts = { total: this.records.size, pending: 0, accepted: 0, rejected: 0, edited: 0, raw: 0 };
    for (const r of this.records.values()) {
      if (r.status === 'cleaned') counts.pending += 1;
      else if (r.status === 'accepted') counts.accepted += 1;
      else if (r.status === 'rejected') counts.rejected += 1;
      else if (r.status === 'edited') counts.edited += 1;
      else if (r.status === 'raw') counts.raw += 1;
    }
    return counts;
  }

  fetch: FetchLike = async (input, init) => {
    if (this.failNextRequests > 0) {
      this.failNextRequests -= 1;
      throw new TypeError('NetworkError: connection refused');
    }
    const url = new URL(input, 'http://fake.local');
    if (url.pathname === '/api/stats') {
      return jsonResponse(200, this.stats());
    }
    if (url.pathname === '/api/queue') {
      const limit = Number(url.searchParams.get('limit') ?? '20');
      const cursor = url.searchParams.get('cursor');
      const minScore = url.searchParams.get('min_score');
      const maxScore = url.searchParams.get('max_score');
      let rows = this.pending(
        url.searchParams.get('kind'),
        url.searchParams.get('modality'),
        minScore === null ? null : Number(minScore),
        maxScore === null ? null : Number(maxScore),
      );
      if (cursor) rows = rows.filter((r) => r.record_id > cursor);
      const batch = rows.slice(0, limit);
      const entries: QueueEntry[] = batch.map((record) => ({
        record,
        page_image_url: `/media/pages/d/0.png`,
        figure_urls: record.image_refs.map((id) => `/media/figures/${id}.png`),
      }));
      return jsonResponse(200, {
        records: entries,
        next_cursor: rows.length > limit ? batch[batch.length - 1].record_id : null,
      });
    }
    if (url.pathname === '/api/verdict') {
      const verdict = JSON.parse(String(init?.body ?? '{}')) as Verdict;
      const record = this.records.get(verdict.record_id);
      if (!record) {
        return jsonResponse(404, { detail: `unknown record ${verdict.record_id}` });
      }
      if (verdict.verdict === 'edit') {
        const problem = this.validateEdit(record, verdict.edited_fields);
        if (problem) return jsonResponse(422, { detail: problem });
        Object.assign(record, verdict.edited_fields);
        record.status = 'edited';
      } else if (verdict.verdict === 'accept') {
        record.status = 'accepted';
      } else if (verdict.verdict === 'reject') {
        record.status = 'rejected';
      } else {
        return jsonResponse(422, { detail: `unknown verdict ${String(verdict.verdict)}` });
      }
      this.verdictLog.push(verdict); // append-only; latest wins by replay order
      return jsonResponse(200, { record });
    }
    return jsonResponse(404, { detail: `no route ${url.pathname}` });
  };
}
