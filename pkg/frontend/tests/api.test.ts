import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';
import { FakeServer, makeRecord } from './fakeserver.js';

describe('ApiClient', () => {
  it('fetches the pending queue with filters and cursor', async () => {
    const server = new FakeServer([
      makeRecord(1),
      makeRecord(2, { kind: 'mcq' }),
      makeRecord(3),
    ]);
    const api = new ApiClient(server.fetch);
    const all = await api.fetchQueue();
    expect(all.records).toHaveLength(3);
    const mcqOnly = await api.fetchQueue({ kind: 'mcq' });
    expect(mcqOnly.records).toHaveLength(1);
    expect(mcqOnly.records[0].record.kind).toBe('mcq');
    const afterFirst = await api.fetchQueue({}, all.records[0].record.record_id);
    expect(afterFirst.records.map((e) => e.record.record_id)).toEqual(['rec002', 'rec003']);
  });

  it('filters by judge-score range', async () => {
    const server = new FakeServer([
      makeRecord(1, { quality: { groundedness_score: 2 } }),
      makeRecord(2, { quality: { groundedness_score: 5 } }),
      makeRecord(3), // unscored: excluded when a range is set
    ]);
    const api = new ApiClient(server.fetch);
    const risky = await api.fetchQueue({ minScore: 1, maxScore: 3 });
    expect(risky.records.map((e) => e.record.record_id)).toEqual(['rec001']);
    const all = await api.fetchQueue();
    expect(all.records).toHaveLength(3);
  });

  it('paginates with next_cursor', async () => {
    const server = new FakeServer(Array.from({ length: 45 }, (_, i) => makeRecord(i)));
    const api = new ApiClient(server.fetch);
    const first = await api.fetchQueue({}, null, 20);
    expect(first.records).toHaveLength(20);
    expect(first.next_cursor).not.toBeNull();
    const second = await api.fetchQueue({}, first.next_cursor, 20);
    expect(second.records).toHaveLength(20);
    const third = await api.fetchQueue({}, second.next_cursor, 20);
    expect(third.records).toHaveLength(5);
    expect(third.next_cursor).toBeNull();
  });

  it('posts verdicts and returns the updated record', async () => {
    const server = new FakeServer([makeRecord(1)]);
    const api = new ApiClient(server.fetch);
    const { record } = await api.submitVerdict({
      record_id: 'rec001',
      verdict: 'accept',
      reviewer_id: 'dr',
    });
    expect(record.status).toBe('accepted');
    expect(server.verdictLog).toHaveLength(1);
  });

  it('surfaces 422 details as non-retryable errors', async () => {
    const server = new FakeServer([makeRecord(1)]);
    const api = new ApiClient(server.fetch);
    const attempt = api.submitVerdict({
      record_id: 'rec001',
      verdict: 'edit',
      reviewer_id: 'dr',
      edited_fields: {},
    });
    await expect(attempt).rejects.toMatchObject({
      name: 'ApiError',
      status: 422,
      retryable: false,
    });
  });

  it('surfaces 404 for unknown records', async () => {
    const server = new FakeServer([]);
    const api = new ApiClient(server.fetch);
    await expect(
      api.submitVerdict({ record_id: 'ghost', verdict: 'accept', reviewer_id: 'dr' }),
    ).rejects.toMatchObject({ status: 404 });
  });

  it('marks transport failures retryable', async () => {
    const server = new FakeServer([makeRecord(1)]);
    server.failNextRequests = 1;
    const api = new ApiClient(server.fetch);
    try {
      await api.stats();
      expect.unreachable('should have thrown');
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).retryable).toBe(true);
      expect((err as ApiError).status).toBeNull();
    }
  });
});
