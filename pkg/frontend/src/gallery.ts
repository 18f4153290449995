import type { GalleryEntry } from './types.js';

export interface Tile {
  jobId: string;
  alpha: number;
  imageUrl: string | null;
  state: GalleryEntry['state'];
  badge: string;
}

export type CompareView =
  | { empty: true; placeholder: string }
  | { empty: false; tiles: Tile[] };

function badgeFor(entry: GalleryEntry): string {
  const p = entry.params;
  const parts = [
    `alpha=${p.alpha}`,
    `steps=${p.steps}`,
    `cfg=${p.cfgScale}`,
    `l=${p.attnLayers.join(',')}`,
    `l'=${p.residualLayers.join(',')}`,
  ];
  if (p.editPrompt) parts.push(`edit="${p.editPrompt}"`);
  if (p.order !== 'content_first') parts.push(p.order);
  return parts.join(' ');
}

/** Side-by-side grid sorted ascending by alpha (stable for equal alphas). */
export function compareView(entries: readonly GalleryEntry[]): CompareView {
  if (entries.length === 0) {
    return { empty: true, placeholder: 'No results yet. Submit a job to compare outputs.' };
  }
  const tiles = entries
    .map((e, i) => ({ e, i }))
    .sort((a, b) => (a.e.params.alpha - b.e.params.alpha) || (a.i - b.i))
    .map(({ e }) => ({
      jobId: e.jobId,
      alpha: e.params.alpha,
      imageUrl: e.resultUrl,
      state: e.state,
      badge: badgeFor(e),
    }));
  return { empty: false, tiles };
}
