/** Thin client over the review HTTP API.
 *
 * fetch is injected so tests run without a browser. Server-side validation
 * failures (422) and not-found (404) become ApiError with the server detail;
 * transport failures become ApiError with retryable=true so the UI can show
 * a retry banner without losing state.
 */

import type { QueueBatch, QueueFilters, Stats, QaRecord, Verdict } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
    readonly retryable: boolean,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export class ApiClient {
  constructor(
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private readonly baseUrl = '',
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`, null, true);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep statusText
      }
      // 5xx may heal on retry; 4xx is a caller problem
      throw new ApiError(detail, response.status, response.status >= 500);
    }
    return (await response.json()) as T;
  }

  fetchQueue(filters: QueueFilters = {}, cursor: string | null = null, limit = 20): Promise<QueueBatch> {
    const params = new URLSearchParams({ status: 'pending', limit: String(limit) });
    if (filters.kind) params.set('kind', filters.kind);
    if (filters.modality) params.set('modality', filters.modality);
    if (filters.minScore !== undefined) params.set('min_score', String(filters.minScore));
    if (filters.maxScore !== undefined) params.set('max_score', String(filters.maxScore));
    if (cursor) params.set('cursor', cursor);
    return this.request<QueueBatch>(`/api/queue?${params.toString()}`);
  }

  submitVerdict(verdict: Verdict): Promise<{ record: QaRecord }> {
    return this.request<{ record: QaRecord }>('/api/verdict', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(verdict),
    });
  }

  stats(): Promise<Stats> {
    return this.request<Stats>('/api/stats');
  }
}
