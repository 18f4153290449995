import { ApiClient } from './api.js';
import { buildControls, controlsToParams } from './controls.js';
import { renderControls, renderGallery } from './dom.js';
import { Session } from './session.js';

async function boot(): Promise<void> {
  const api = new ApiClient('');
  const meta = await api.getMeta();
  const session = new Session(api, meta);
  const controls = buildControls(meta);

  const controlsRoot = document.getElementById('controls')!;
  const galleryRoot = document.getElementById('gallery')!;
  const errorsOut = () => document.getElementById('form-errors')!;

  const contentInput = document.getElementById('content-file') as HTMLInputElement;
  const styleInput = document.getElementById('style-file') as HTMLInputElement;
  const syncAssets = () => session.setAssets(
    contentInput.files?.[0] ?? null, styleInput.files?.[0] ?? null);
  contentInput.addEventListener('change', syncAssets);
  styleInput.addEventListener('change', syncAssets);

  session.onChange(() => renderGallery(galleryRoot, session.gallery()));
  renderGallery(galleryRoot, session.gallery());

  renderControls(controlsRoot, controls, () => {
    const params = controlsToParams(controls);
    const errors = session.setParams(params);
    errorsOut().textContent = errors.join('; ');
    if (errors.length > 0) return;
    if (!session.assets.content || !session.assets.style) {
      errorsOut().textContent = 'upload a content and a style image first';
      return;
    }
    session.submitAndTrack().catch((err) => {
      errorsOut().textContent = String(err);
    });
  });
}

boot().catch((err) => {
  document.body.prepend(`failed to reach the service: ${err}`);
});
