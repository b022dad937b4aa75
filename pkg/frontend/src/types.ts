/**
 * Wire types for the labeling service, with runtime validators. Every
 * rendered value must trace back to one of these fields; the UI never
 * invents data of its own.
 */

export interface SegmentView {
  trajectory_index: number;
  start: number;
  states: number[];
  actions: number[];
}

export interface GridGeometry {
  kind: string;
  width: number;
  height: number;
  goal_states: number[];
  start_state: number;
}

export interface QueryDocument {
  query_id: string;
  round: number;
  of_rounds: number;
  segment_length: number;
  seg1: SegmentView;
  seg2: SegmentView;
  geometry: GridGeometry;
}

export interface MetricsRecord {
  round: number;
  suboptimality: number;
  reward_correlation: number;
  query_score: number;
  wall_ms: number;
}

export type SessionStatus = 'training' | 'awaiting_label' | 'done';

export interface SessionDocument {
  session_id: string;
  config_digest: string;
  round: number;
  of_rounds: number;
  status: SessionStatus;
  has_pending_query: boolean;
  metrics: MetricsRecord[];
  final_suboptimality: number | null;
}

export class SchemaError extends Error {
  constructor(path: string, detail: string) {
    super(`bad document at ${path}: ${detail}`);
    this.name = 'SchemaError';
  }
}

function need(cond: boolean, path: string, detail: string): void {
  if (!cond) throw new SchemaError(path, detail);
}

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === 'object' && x !== null && !Array.isArray(x);
}

function intArray(x: unknown, path: string): number[] {
  need(Array.isArray(x), path, 'expected an array');
  const arr = x as unknown[];
  arr.forEach((v, i) =>
    need(Number.isInteger(v), `${path}[${i}]`, 'expected an integer'),
  );
  return arr as number[];
}

function int(x: unknown, path: string): number {
  need(Number.isInteger(x), path, 'expected an integer');
  return x as number;
}

function str(x: unknown, path: string): string {
  need(typeof x === 'string', path, 'expected a string');
  return x as string;
}

function parseSegment(x: unknown, path: string): SegmentView {
  need(isRecord(x), path, 'expected an object');
  const o = x as Record<string, unknown>;
  const states = intArray(o.states, `${path}.states`);
  const actions = intArray(o.actions, `${path}.actions`);
  need(states.length === actions.length, path, 'states/actions length mismatch');
  need(states.length > 0, path, 'empty segment');
  return {
    trajectory_index: int(o.trajectory_index, `${path}.trajectory_index`),
    start: int(o.start, `${path}.start`),
    states,
    actions,
  };
}

function parseGeometry(x: unknown, path: string): GridGeometry {
  need(isRecord(x), path, 'expected an object');
  const o = x as Record<string, unknown>;
  const width = int(o.width, `${path}.width`);
  const height = int(o.height, `${path}.height`);
  need(width >= 1 && height >= 1, path, 'degenerate geometry');
  return {
    kind: str(o.kind, `${path}.kind`),
    width,
    height,
    goal_states: intArray(o.goal_states, `${path}.goal_states`),
    start_state: int(o.start_state, `${path}.start_state`),
  };
}

export function parseQueryDocument(x: unknown): QueryDocument {
  need(isRecord(x), '$', 'expected an object');
  const o = x as Record<string, unknown>;
  const doc: QueryDocument = {
    query_id: str(o.query_id, '$.query_id'),
    round: int(o.round, '$.round'),
    of_rounds: int(o.of_rounds, '$.of_rounds'),
    segment_length: int(o.segment_length, '$.segment_length'),
    seg1: parseSegment(o.seg1, '$.seg1'),
    seg2: parseSegment(o.seg2, '$.seg2'),
    geometry: parseGeometry(o.geometry, '$.geometry'),
  };
  const cells = doc.geometry.width * doc.geometry.height;
  for (const [name, seg] of [['seg1', doc.seg1], ['seg2', doc.seg2]] as const) {
    seg.states.forEach((s, i) =>
      need(s >= 0 && s < cells, `$.${name}.states[${i}]`, 'state outside grid'),
    );
  }
  return doc;
}

export function parseSessionDocument(x: unknown): SessionDocument {
  need(isRecord(x), '$', 'expected an object');
  const o = x as Record<string, unknown>;
  const status = str(o.status, '$.status');
  need(
    status === 'training' || status === 'awaiting_label' || status === 'done',
    '$.status',
    `unknown status ${status}`,
  );
  need(Array.isArray(o.metrics), '$.metrics', 'expected an array');
  return {
    session_id: str(o.session_id, '$.session_id'),
    config_digest: str(o.config_digest, '$.config_digest'),
    round: int(o.round, '$.round'),
    of_rounds: int(o.of_rounds, '$.of_rounds'),
    status: status as SessionStatus,
    has_pending_query: Boolean(o.has_pending_query),
    metrics: o.metrics as MetricsRecord[],
    final_suboptimality:
      o.final_suboptimality == null ? null : (o.final_suboptimality as number),
  };
}
