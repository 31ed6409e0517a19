/** Review session state machine.
 *
 * Holds the fetched queue, the cursor for pagination, and progress counters.
 * Verdicts post to the server and the displayed record is reconciled from
 * the server's response (the UI never trusts its optimistic copy). A 422
 * from the server surfaces as an inline error and the session does not
 * advance; transport failures raise a retry banner and lose nothing.
 */

import { ApiClient, ApiError } from './api.js';
import type {
  EditedFields,
  QueueEntry,
  QueueFilters,
  Stats,
  VerdictKind,
} from './types.js';

export interface SessionCounts {
  accepted: number;
  rejected: number;
  edited: number;
}

export class ReviewSession {
  entries: QueueEntry[] = [];
  position = 0;
  cursor: string | null = null;
  complete = false;
  inlineError: string | null = null;
  retryBanner: string | null = null;
  stats: Stats | null = null;
  counts: SessionCounts = { accepted: 0, rejected: 0, edited: 0 };

  constructor(
    private readonly api: ApiClient,
    private readonly filters: QueueFilters = {},
    readonly reviewerId: string = 'reviewer',
    private readonly batchSize = 20,
  ) {}

  current(): QueueEntry | null {
    return this.position < this.entries.length ? this.entries[this.position] : null;
  }

  reviewedCount(): number {
    return this.counts.accepted + this.counts.rejected + this.counts.edited;
  }

  async start(): Promise<void> {
    await this.refresh();
  }

  /** Reload stats and the pending queue from scratch (also the recovery path
   * when another reviewer superseded our view). */
  async refresh(): Promise<void> {
    try {
      this.stats = await this.api.stats();
      const batch = await this.api.fetchQueue(this.filters, null, this.batchSize);
      this.entries = batch.records;
      this.cursor = batch.next_cursor;
      this.position = 0;
      this.complete = this.entries.length === 0;
      this.retryBanner = null;
    } catch (err) {
      this.handleTransport(err);
    }
  }

  private handleTransport(err: unknown): void {
    if (err instanceof ApiError && err.retryable) {
      this.retryBanner = err.message;
      return;
    }
    throw err;
  }

  private async advance(): Promise<void> {
    this.position += 1;
    if (this.position < this.entries.length) return;
    if (this.cursor) {
      try {
        const batch = await this.api.fetchQueue(this.filters, this.cursor, this.batchSize);
        this.entries = this.entries.concat(batch.records);
        this.cursor = batch.next_cursor;
      } catch (err) {
        this.handleTransport(err);
        return;
      }
    }
    if (this.position >= this.entries.length) {
      this.complete = true;
      try {
        this.stats = await this.api.stats();
      } catch (err) {
        this.handleTransport(err);
      }
    }
  }

  /** Post a verdict for the displayed record. Returns true when the session
   * advanced to the next record. */
  async submit(kind: VerdictKind, edited?: EditedFields): Promise<boolean> {
    const entry = this.current();
    if (!entry) return false;
    this.inlineError = null;
    try {
      const { record } = await this.api.submitVerdict({
        record_id: entry.record.record_id,
        verdict: kind,
        reviewer_id: this.reviewerId,
        ...(kind === 'edit' ? { edited_fields: edited } : {}),
      });
      entry.record = record; // displayed state is the server's, always
    } catch (err) {
      if (err instanceof ApiError) {
        if (err.retryable) {
          this.retryBanner = err.message;
        } else {
          this.inlineError = err.message;
        }
        return false;
      }
      throw err;
    }
    if (kind === 'accept') this.counts.accepted += 1;
    else if (kind === 'reject') this.counts.rejected += 1;
    else this.counts.edited += 1;
    await this.advance();
    return true;
  }
}
