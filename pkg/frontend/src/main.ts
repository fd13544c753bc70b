import { ReviewApi } from './api.js';
import { SessionController } from './controller.js';
import { mount } from './ui.js';

function start(): void {
    const params = new URLSearchParams(window.location.search);
    let inspector = params.get('inspector');
    if (!inspector) {
        inspector = window.prompt('inspector id?') ?? '';
    }
    const root = document.getElementById('app');
    if (!root) throw new Error('missing #app element');
    if (!inspector) {
        root.textContent = 'no inspector id given; reload with ?inspector=ID';
        return;
    }
    const controller = new SessionController(new ReviewApi(), inspector, {
        storage: window.localStorage,
    });
    mount(root, controller);
}

start();
