/** Browser bootstrap: wires the loop to the page and the keyboard. */

import { ApiClient } from './api.js';
import { Choice, LabelLoop, ViewState, choiceForKey } from './app.js';

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function main(): void {
  const view = byId('view');
  const status = byId('status');
  const controls = byId('controls');
  const buttons: Record<Choice, HTMLButtonElement> = {
    left: byId('choose-left') as HTMLButtonElement,
    right: byId('choose-right') as HTMLButtonElement,
    tie: byId('choose-tie') as HTMLButtonElement,
  };

  const api = new ApiClient((url, init) => fetch(url, init));
  const loop = new LabelLoop(api, (state: ViewState) => {
    view.innerHTML = state.html;
    status.textContent =
      state.session === null
        ? state.phase
        : `${state.phase} — round ${state.session.round} of ${state.session.of_rounds}`;
    controls.classList.toggle('hidden', state.phase === 'done');
    for (const button of Object.values(buttons)) {
      button.disabled = !state.controlsEnabled;
    }
  });

  for (const [choice, button] of Object.entries(buttons) as [
    Choice,
    HTMLButtonElement,
  ][]) {
    button.addEventListener('click', () => void loop.choose(choice));
  }
  document.addEventListener('keydown', (event) => {
    const choice = choiceForKey(event.key);
    if (choice) void loop.choose(choice);
  });

  void loop.run();
}

main();
