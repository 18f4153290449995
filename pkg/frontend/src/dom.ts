import type { ControlsModel } from './controls.js';
import { compareView } from './gallery.js';
import type { GalleryEntry } from './types.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function layerSelect(id: string, options: number[], selected: number[]): HTMLElement {
  const box = el('fieldset', { id, class: 'layers' });
  for (const layer of options) {
    const cb = el('input', { type: 'checkbox', value: String(layer) }) as HTMLInputElement;
    cb.checked = selected.includes(layer);
    box.append(el('label', {}, cb, ` ${layer}`));
  }
  return box;
}

function selectedLayers(root: HTMLElement, id: string): number[] {
  return [...root.querySelectorAll<HTMLInputElement>(`#${id} input:checked`)]
    .map((cb) => Number(cb.value));
}

export function renderControls(root: HTMLElement, model: ControlsModel,
                               onSubmit: () => void): void {
  const alpha = el('input', {
    id: 'alpha', type: 'range',
    min: String(model.alpha.min), max: String(model.alpha.max),
    step: String(model.alpha.step), value: String(model.alpha.value),
  }) as HTMLInputElement;
  const alphaOut = el('output', { id: 'alpha-out' }, String(model.alpha.value));
  alpha.addEventListener('input', () => {
    model.alpha.value = Number(alpha.value);
    alphaOut.textContent = alpha.value;
  });

  const steps = el('input', { id: 'steps', type: 'number', min: '1',
                              value: String(model.steps.value) }) as HTMLInputElement;
  steps.addEventListener('input', () => { model.steps.value = Number(steps.value); });
  const cfg = el('input', { id: 'cfg', type: 'number', min: '0', step: '0.5',
                            value: String(model.cfgScale.value) }) as HTMLInputElement;
  cfg.addEventListener('input', () => { model.cfgScale.value = Number(cfg.value); });
  const edit = el('input', { id: 'edit-prompt', type: 'text',
                             placeholder: 'edit prompt (optional)' }) as HTMLInputElement;
  edit.addEventListener('input', () => { model.editPrompt = edit.value; });

  const order = el('select', { id: 'order' }) as HTMLSelectElement;
  for (const o of model.order.options) order.append(el('option', { value: o }, o));
  order.value = model.order.value;
  order.addEventListener('change', () => { model.order.value = order.value; });

  const attn = layerSelect('attn-layers', model.attnLayers.options,
                           model.attnLayers.selected);
  const resid = layerSelect('residual-layers', model.residualLayers.options,
                            model.residualLayers.selected);
  attn.addEventListener('change', () => {
    model.attnLayers.selected = selectedLayers(root, 'attn-layers');
  });
  resid.addEventListener('change', () => {
    model.residualLayers.selected = selectedLayers(root, 'residual-layers');
  });

  const submit = el('button', { id: 'submit' }, 'Stylize');
  submit.addEventListener('click', onSubmit);

  root.append(
    el('div', { class: 'row' }, el('label', { for: 'alpha' }, 'style proportion '), alpha, alphaOut),
    el('div', { class: 'row' }, el('label', {}, 'steps '), steps,
       el('label', {}, ' guidance '), cfg),
    el('div', { class: 'row' }, el('label', {}, 'attention layers '), attn),
    el('div', { class: 'row' }, el('label', {}, 'residual layers '), resid),
    el('div', { class: 'row' }, el('label', {}, 'order '), order, edit),
    el('div', { class: 'row' }, submit, el('span', { id: 'form-errors', class: 'errors' })),
  );
}

export function renderGallery(root: HTMLElement, entries: readonly GalleryEntry[]): void {
  root.replaceChildren();
  const view = compareView(entries);
  if (view.empty) {
    root.append(el('p', { class: 'placeholder' }, view.placeholder));
    return;
  }
  const grid = el('div', { class: 'grid' });
  for (const tile of view.tiles) {
    const cell = el('figure', { class: `tile state-${tile.state}` });
    if (tile.imageUrl) {
      cell.append(el('img', { src: tile.imageUrl, alt: `result ${tile.jobId}` }));
    } else {
      cell.append(el('div', { class: 'pending' }, tile.state));
    }
    cell.append(el('figcaption', {}, tile.badge));
    grid.append(cell);
  }
  root.append(grid);
}
