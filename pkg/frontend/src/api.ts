/** Thin client over the labeling endpoints. `fetch` is injected so tests
 * can run without a network or a DOM. */

import {
  QueryDocument,
  SessionDocument,
  parseQueryDocument,
  parseSessionDocument,
} from './types.js';

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export type WireLabel = '1' | '0' | 'tie';

export class ConflictError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = 'ConflictError';
  }
}

export class ApiClient {
  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly base = '',
  ) {}

  async session(): Promise<SessionDocument> {
    const resp = await this.fetchImpl(`${this.base}/api/session`);
    if (resp.status !== 200) {
      throw new Error(`session endpoint returned ${resp.status}`);
    }
    return parseSessionDocument(await resp.json());
  }

  async nextQuery(): Promise<QueryDocument> {
    const resp = await this.fetchImpl(`${this.base}/api/query/next`);
    if (resp.status === 409) {
      throw new ConflictError('no query awaiting a label');
    }
    if (resp.status !== 200) {
      throw new Error(`query endpoint returned ${resp.status}`);
    }
    return parseQueryDocument(await resp.json());
  }

  async answer(queryId: string, label: WireLabel): Promise<void> {
    const resp = await this.fetchImpl(
      `${this.base}/api/query/${queryId}/answer`,
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ label }),
      },
    );
    if (resp.status === 409) {
      throw new ConflictError('answer rejected: stale query or wrong state');
    }
    if (resp.status !== 202) {
      throw new Error(`answer endpoint returned ${resp.status}`);
    }
  }
}
