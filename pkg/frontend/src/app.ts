/** Session driver: polls the service, renders the active query, and posts
 * exactly one answer per human choice. */

import { ApiClient, ConflictError, WireLabel } from './api.js';
import { renderError, renderQuery } from './grid.js';
import { QueryDocument, SessionDocument } from './types.js';

export type Choice = 'left' | 'right' | 'tie';

export const CHOICE_TO_WIRE: Record<Choice, WireLabel> = {
  left: '1',
  right: '0',
  tie: 'tie',
};

const KEY_MAP: Record<string, Choice> = {
  ArrowLeft: 'left',
  ArrowRight: 'right',
  '1': 'left',
  '2': 'right',
  t: 'tie',
  T: 'tie',
};

export function choiceForKey(key: string): Choice | null {
  return KEY_MAP[key] ?? null;
}

export interface ViewState {
  phase: 'connecting' | 'training' | 'labeling' | 'done' | 'error';
  controlsEnabled: boolean;
  html: string;
  session: SessionDocument | null;
}

/** Inline SVG line chart of per-round suboptimality; drawn only from
 * server-reported metrics. */
export function renderMetricsChart(session: SessionDocument): string {
  const values = session.metrics.map((m) => m.suboptimality);
  if (values.length === 0) return '<div class="chart empty">no metrics</div>';
  const w = 320;
  const h = 120;
  const top = Math.max(...values, 1e-9);
  const points = values
    .map((v, i) => {
      const x = values.length === 1 ? w / 2 : (i / (values.length - 1)) * w;
      const y = h - (v / top) * h;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
  const final =
    session.final_suboptimality == null
      ? ''
      : `<div class="final">final suboptimality ${session.final_suboptimality.toFixed(4)}</div>`;
  return [
    `<svg class="chart" viewBox="0 0 ${w} ${h}" width="${w}" height="${h}">`,
    `<polyline fill="none" stroke="currentColor" points="${points}"/>`,
    `</svg>`,
    final,
  ].join('');
}

export class LabelLoop {
  private query: QueryDocument | null = null;
  private posting = false;
  private stopped = false;

  constructor(
    private readonly api: ApiClient,
    private readonly onRender: (state: ViewState) => void,
    private readonly pollIntervalMs = 500,
    private readonly sleep: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {}

  stop(): void {
    this.stopped = true;
  }

  get pendingQuery(): QueryDocument | null {
    return this.query;
  }

  private render(
    phase: ViewState['phase'],
    html: string,
    session: SessionDocument | null,
    controlsEnabled: boolean,
  ): void {
    this.onRender({ phase, html, session, controlsEnabled });
  }

  /** One observation of the server; safe to call repeatedly. */
  async pollOnce(): Promise<ViewState['phase']> {
    let session: SessionDocument;
    try {
      session = await this.api.session();
    } catch (err) {
      this.render('error', renderError(String(err)), null, false);
      return 'error';
    }
    if (session.status === 'done') {
      this.query = null;
      this.render('done', renderMetricsChart(session), session, false);
      return 'done';
    }
    if (session.status === 'training') {
      this.query = null;
      this.render('training', '<div class="spinner">training</div>', session, false);
      return 'training';
    }
    if (this.query === null) {
      try {
        this.query = await this.api.nextQuery();
      } catch (err) {
        if (err instanceof ConflictError) {
          // state moved under us; next poll resyncs
          return 'training';
        }
        this.render('error', renderError(String(err)), session, false);
        return 'error';
      }
    }
    this.render('labeling', renderQuery(this.query), session, !this.posting);
    return 'labeling';
  }

  /** Post the choice for the pending query. Re-entry while a POST is in
   * flight (double click, key repeat) is a no-op. */
  async choose(choice: Choice): Promise<void> {
    if (this.query === null || this.posting) return;
    this.posting = true;
    const query = this.query;
    try {
      await this.api.answer(query.query_id, CHOICE_TO_WIRE[choice]);
      this.query = null;
    } catch (err) {
      this.query = null;
      if (!(err instanceof ConflictError)) {
        this.render('error', renderError(String(err)), null, false);
        this.posting = false;
        return;
      }
      // conflict: the server no longer accepts this query; fall through
      // and resync from the session document
    } finally {
      this.posting = false;
    }
    await this.pollOnce();
  }

  /** Poll until the session reaches a terminal phase. */
  async run(): Promise<void> {
    while (!this.stopped) {
      const phase = await this.pollOnce();
      if (phase === 'done' || phase === 'error') return;
      await this.sleep(this.pollIntervalMs);
    }
  }
}
