/** Pure HTML-string renderers for the two-panel trajectory comparison.
 * Keeping these DOM-free makes them directly assertable in tests. */

import { GridGeometry, QueryDocument, SegmentView } from './types.js';

const ACTION_GLYPHS = ['↑', '↓', '←', '→'];

function escapeHtml(s: string): string {
  return s
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function actionGlyph(action: number): string {
  return ACTION_GLYPHS[action] ?? String(action);
}

/** Visit order per cell: state index -> 1-based step numbers, so repeated
 * visits stay distinguishable. */
export function visitOrder(seg: SegmentView): Map<number, number[]> {
  const order = new Map<number, number[]>();
  seg.states.forEach((s, i) => {
    const prev = order.get(s) ?? [];
    prev.push(i + 1);
    order.set(s, prev);
  });
  return order;
}

export function renderSegmentPanel(
  geometry: GridGeometry,
  seg: SegmentView,
  panelId: string,
): string {
  const order = visitOrder(seg);
  const rows: string[] = [];
  for (let y = 0; y < geometry.height; y++) {
    const cells: string[] = [];
    for (let x = 0; x < geometry.width; x++) {
      const state = y * geometry.width + x;
      const classes = ['cell'];
      if (geometry.goal_states.includes(state)) classes.push('goal');
      if (state === geometry.start_state) classes.push('start');
      const steps = order.get(state);
      let badge = '';
      if (steps) {
        classes.push('visited');
        if (steps.includes(seg.states.length)) classes.push('last');
        badge = `<span class="steps">${steps.join(',')}</span>`;
      }
      cells.push(
        `<td class="${classes.join(' ')}" data-state="${state}">${badge}</td>`,
      );
    }
    rows.push(`<tr>${cells.join('')}</tr>`);
  }
  const moves = seg.actions.map(actionGlyph).join(' ');
  return [
    `<div class="panel" id="${panelId}">`,
    `<table class="grid">${rows.join('')}</table>`,
    `<div class="moves">${escapeHtml(moves)}</div>`,
    `<div class="meta">trajectory ${seg.trajectory_index}, ` +
      `steps ${seg.start}–${seg.start + seg.states.length - 1}</div>`,
    `</div>`,
  ].join('');
}

export function renderQuery(doc: QueryDocument): string {
  return [
    `<div class="round">Query ${doc.round} of ${doc.of_rounds}</div>`,
    `<div class="panels">`,
    renderSegmentPanel(doc.geometry, doc.seg1, 'left-panel'),
    renderSegmentPanel(doc.geometry, doc.seg2, 'right-panel'),
    `</div>`,
  ].join('');
}

export function renderError(message: string): string {
  return `<div class="error">${escapeHtml(message)}</div>`;
}
